use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::hash::{BuildHasherDefault, Hasher};
use std::rc::Rc;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

/// Node ids are unique sequential integers; a multiplicative mix beats
/// SipHash for the hot per-node maps in the backward sweep.
#[derive(Default)]
struct IdHasher(u64);

impl Hasher for IdHasher {
    fn write(&mut self, _bytes: &[u8]) {
        unreachable!("IdHasher only hashes u64 node ids");
    }
    fn write_u64(&mut self, id: u64) {
        self.0 = id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

type IdMap<V> = HashMap<u64, V, BuildHasherDefault<IdHasher>>;

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Backward closure: maps the upstream gradient of this node to one gradient
/// buffer per parent (`None` for parents that receive no flow). Parents are
/// passed in at traversal time so closures never hold `Value` handles (see
/// the teardown note on [`Node`]); anything else a rule needs (activation
/// outputs, shapes) is captured by copy at forward time.
pub(crate) type BackwardFn = Box<dyn Fn(&[Value], &[f64]) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct Node {
    id: u64,
    data: RefCell<Vec<f64>>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: RefCell<Vec<f64>>,
    parents: Vec<Value>,
    backward: Option<BackwardFn>,
}

// Long rollout graphs form parent chains thousands of nodes deep; the default
// recursive Rc teardown would exhaust the stack, so parents are released
// iteratively. Backward closures capture plain data copies (never `Value`
// handles), so this loop covers every graph edge.
impl Drop for Node {
    fn drop(&mut self) {
        let mut stack: Vec<Value> = std::mem::take(&mut self.parents);
        while let Some(v) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(v.0) {
                stack.append(&mut node.parents);
            }
        }
    }
}

/// A node in the computation graph: dense row-major data plus, when the node
/// tracks gradients, an accumulated gradient buffer of identical shape.
///
/// `Value` is a cheap reference-counted handle; cloning shares the node.
/// Graphs are confined to a single thread.
#[derive(Clone)]
pub struct Value(pub(crate) Rc<Node>);

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Value")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data.borrow())
            .finish()
    }
}

impl Value {
    fn new(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        parents: Vec<Value>,
        backward: Option<BackwardFn>,
    ) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Value(Rc::new(Node {
            id: next_id(),
            data: RefCell::new(data),
            shape,
            requires_grad,
            grad: RefCell::new(Vec::new()),
            parents,
            backward,
        }))
    }

    /// Constant leaf (no gradient tracking).
    pub fn constant(data: Vec<f64>, shape: Vec<usize>) -> Self {
        Value::new(data, shape, false, Vec::new(), None)
    }

    /// Constant scalar, shape `[1]`.
    pub fn scalar(x: f64) -> Self {
        Value::constant(vec![x], vec![1])
    }

    /// Constant vector, shape `[n]`.
    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Value::constant(data, vec![n])
    }

    /// Gradient-tracking leaf (a trainable parameter).
    pub fn parameter(data: Vec<f64>, shape: Vec<usize>) -> Self {
        Value::new(data, shape, true, Vec::new(), None)
    }

    /// Result of an op. Tracks gradients iff any parent does; parents and the
    /// backward closure are only retained in that case, so constant-only
    /// subgraphs are freed as soon as their handles drop.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Value>,
        backward: BackwardFn,
    ) -> Self {
        let requires = parents.iter().any(|p| p.0.requires_grad);
        if requires {
            Value::new(data, shape, true, parents, Some(backward))
        } else {
            Value::new(data, shape, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Borrow the forward data.
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Copy of the forward data.
    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Scalar payload of a one-element value.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar shape {:?}", self.shape());
        self.0.data.borrow()[0]
    }

    /// Accumulated gradient, if any flow has reached this node. Present only
    /// on gradient-tracking nodes.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let g = self.0.grad.borrow();
        if g.is_empty() {
            None
        } else {
            Some(g.clone())
        }
    }

    /// Clear the accumulated gradient.
    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().clear();
    }

    /// Replace parameter data in place (optimizer step, checkpoint load).
    /// The new data must have the same length.
    pub fn set_data(&self, new: &[f64]) {
        let mut d = self.0.data.borrow_mut();
        assert_eq!(d.len(), new.len(), "set_data length mismatch");
        d.copy_from_slice(new);
    }

    /// A new constant leaf holding a copy of this value's data, severing any
    /// graph connection. Used when closed-loop state should not keep earlier
    /// frames' graphs alive.
    pub fn detach(&self) -> Value {
        Value::constant(self.to_vec(), self.0.shape.clone())
    }

    /// Reverse-mode sweep from a scalar root. Gradients of every reachable
    /// gradient-tracking node are accumulated (`+=`) into its grad buffer.
    ///
    /// Panics if the root is not scalar-shaped.
    pub fn backward(&self) {
        assert_eq!(
            self.numel(),
            1,
            "backward() requires a scalar root, got shape {:?}",
            self.shape()
        );
        if !self.0.requires_grad {
            return;
        }

        // Reachable gradient-tracking nodes. Node ids increase monotonically
        // with creation order and every parent precedes its children, so
        // descending id order is a valid reverse-topological order.
        let mut reachable: Vec<Value> = Vec::new();
        let mut seen: IdMap<()> = IdMap::default();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if seen.insert(v.0.id, ()).is_some() {
                continue;
            }
            for p in &v.0.parents {
                if p.0.requires_grad {
                    stack.push(p.clone());
                }
            }
            reachable.push(v);
        }
        reachable.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        // Pass-local flow buffers keep this sweep independent of whatever is
        // already stored in node grads, which is what makes repeated backward
        // calls accumulate linearly.
        let mut flow: IdMap<Vec<f64>> = IdMap::default();
        flow.insert(self.0.id, vec![1.0]);

        for v in &reachable {
            let Some(g) = flow.remove(&v.0.id) else {
                continue;
            };
            {
                let mut acc = v.0.grad.borrow_mut();
                if acc.is_empty() {
                    acc.resize(v.numel(), 0.0);
                }
                for (a, gi) in acc.iter_mut().zip(&g) {
                    *a += gi;
                }
            }
            if let Some(bw) = &v.0.backward {
                let parent_grads = bw(&v.0.parents, &g);
                debug_assert_eq!(parent_grads.len(), v.0.parents.len());
                for (p, pg) in v.0.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.0.requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel());
                    let buf = flow
                        .entry(p.0.id)
                        .or_insert_with(|| vec![0.0; p.numel()]);
                    for (b, x) in buf.iter_mut().zip(&pg) {
                        *b += x;
                    }
                }
            }
        }
    }
}
