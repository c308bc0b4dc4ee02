//! Trajectory CSV I/O: `frame,ped_id,x,y` in meters.
//!
//! Frame numbers may advance with any fixed stride (for datasets sampled
//! every Nth video frame); the stride is the greatest common divisor of all
//! per-pedestrian frame gaps. Per pedestrian, frames must be strictly
//! increasing and contiguous at that stride.

use super::{Episode, Vec2};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

pub fn load_trajectories(path: impl AsRef<Path>, frame_interval: f64) -> Result<Episode> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_trajectories(file, frame_interval)
}

pub fn parse_trajectories(reader: impl Read, frame_interval: f64) -> Result<Episode> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    {
        let headers = csv_reader
            .headers()
            .map_err(|e| Error::TrajectoryParse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let expected = ["frame", "ped_id", "x", "y"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::TrajectoryParse {
                line: 1,
                message: format!("expected header `frame,ped_id,x,y`, got `{}`", got.join(",")),
            });
        }
    }

    // ped id -> ordered (frame -> position)
    let mut rows: BTreeMap<u64, Vec<(i64, Vec2)>> = BTreeMap::new();
    for record in csv_reader.records() {
        let record = record.map_err(|e| Error::TrajectoryParse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_field = |idx: usize, name: &str| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::TrajectoryParse {
                line,
                message: format!("missing field `{name}`"),
            })
        };
        let frame: i64 = parse_field(0, "frame")?
            .parse()
            .map_err(|_| Error::TrajectoryParse {
                line,
                message: "frame is not an integer".into(),
            })?;
        let ped: u64 = parse_field(1, "ped_id")?
            .parse()
            .map_err(|_| Error::TrajectoryParse {
                line,
                message: "ped_id is not a non-negative integer".into(),
            })?;
        let x: f64 = parse_field(2, "x")?
            .parse()
            .map_err(|_| Error::TrajectoryParse {
                line,
                message: "x is not a number".into(),
            })?;
        let y: f64 = parse_field(3, "y")?
            .parse()
            .map_err(|_| Error::TrajectoryParse {
                line,
                message: "y is not a number".into(),
            })?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::TrajectoryParse {
                line,
                message: "non-finite coordinate".into(),
            });
        }
        let entry = rows.entry(ped).or_default();
        if let Some((prev, _)) = entry.last() {
            if frame <= *prev {
                return Err(Error::TrajectoryParse {
                    line,
                    message: format!(
                        "frames for pedestrian {ped} are not strictly increasing ({prev} then {frame})"
                    ),
                });
            }
        }
        entry.push((frame, Vec2::new(x, y)));
    }

    if rows.is_empty() {
        return Err(Error::TrajectoryParse {
            line: 0,
            message: "no trajectory rows".into(),
        });
    }

    let min_frame = rows.values().flat_map(|v| v.iter().map(|(f, _)| *f)).min().unwrap();
    let max_frame = rows.values().flat_map(|v| v.iter().map(|(f, _)| *f)).max().unwrap();
    let mut stride: i64 = 0;
    for entries in rows.values() {
        for pair in entries.windows(2) {
            stride = gcd(stride, pair[1].0 - pair[0].0);
        }
        stride = gcd(stride, entries[0].0 - min_frame);
    }
    if stride == 0 {
        stride = 1;
    }

    let frames = ((max_frame - min_frame) / stride) as usize + 1;
    let ped_ids: Vec<u64> = rows.keys().copied().collect();
    let mut grid = vec![vec![None; frames]; ped_ids.len()];
    for (p, entries) in rows.values().enumerate() {
        for (frame, pos) in entries {
            let offset = frame - min_frame;
            if offset % stride != 0 {
                return Err(Error::TrajectoryParse {
                    line: 0,
                    message: format!(
                        "frame {frame} does not align with detected stride {stride}"
                    ),
                });
            }
            grid[p][(offset / stride) as usize] = Some(*pos);
        }
    }

    Episode::from_positions(ped_ids, grid, frame_interval)
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Write valid positions as `frame,ped_id,x,y` with frames numbered from 0.
/// Floats are emitted with Rust's shortest round-trip formatting, so output
/// bytes are a pure function of the data.
pub fn save_trajectories(path: impl AsRef<Path>, episode: &Episode) -> Result<()> {
    let mut out = String::from("frame,ped_id,x,y\n");
    for frame in 0..episode.num_frames() {
        for ped in 0..episode.num_pedestrians() {
            if let Some(p) = episode.position(ped, frame) {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    frame, episode.ped_ids[ped], p.x, p.y
                ));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
