//! Session runner: merges the scan streams of one or two sensors by scan-end
//! time and drives their pipelines against a single shared voxel map.

use std::path::Path;

use serde::Serialize;

use crate::config::{RunConfig, RunMode, SensorSlot};
use crate::dataset::{write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::esikf::FilterState;
use crate::pipeline::{DiagRecord, Insertion, PipelineHandle, PipelineStatus, SensorInput, SessionParams, Transition};
use crate::tum::{self, StampedPose};
use crate::voxel_map::VoxelMap;

/// Consecutive scans further apart than this abort the session (s).
pub const MAX_STREAM_GAP: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub slot: SensorSlot,
    pub status: PipelineStatus,
    pub trajectory: Vec<StampedPose>,
    pub diagnostics: Vec<DiagRecord>,
    pub transitions: Vec<Transition>,
    pub insertions: Vec<Insertion>,
    pub init_attempts: usize,
    /// Filter state after the last scan; `None` if never initialized.
    pub final_state: Option<FilterState>,
}

impl From<PipelineHandle> for PipelineOutput {
    fn from(h: PipelineHandle) -> Self {
        Self {
            slot: h.slot,
            status: h.status,
            trajectory: h.trajectory,
            diagnostics: h.diagnostics,
            transitions: h.transitions,
            insertions: h.insertions,
            init_attempts: h.init_attempts,
            final_state: h.state,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutput {
    /// Primary first.
    pub pipelines: Vec<PipelineOutput>,
    pub map: VoxelMap,
}

#[derive(Serialize)]
struct PipelineSummary<'a> {
    slot: SensorSlot,
    status: PipelineStatus,
    poses: usize,
    scans: usize,
    degenerate_scans: usize,
    init_attempts: usize,
    map_points_stored: usize,
    transitions: &'a [Transition],
}

impl SessionOutput {
    pub fn pipeline(&self, slot: SensorSlot) -> Option<&PipelineOutput> {
        self.pipelines.iter().find(|p| p.slot == slot)
    }

    /// Writes `<slot>_traj.tum`, `diag_<slot>.jsonl`, `map.ply` (with
    /// source ids) and `session.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut summaries = Vec::new();
        for p in &self.pipelines {
            let name = p.slot.name();
            tum::write(&dir.join(format!("{name}_traj.tum")), &p.trajectory)?;
            let mut diag = String::new();
            for d in &p.diagnostics {
                diag.push_str(&serde_json::to_string(d).expect("diagnostics serialize"));
                diag.push('\n');
            }
            write_atomic(&dir.join(format!("diag_{name}.jsonl")), diag.as_bytes())?;
            summaries.push(PipelineSummary {
                slot: p.slot,
                status: p.status,
                poses: p.trajectory.len(),
                scans: p.diagnostics.len(),
                degenerate_scans: p.diagnostics.iter().filter(|d| d.report.degenerate).count(),
                init_attempts: p.init_attempts,
                map_points_stored: p.insertions.iter().map(|i| i.stored).sum(),
                transitions: &p.transitions,
            });
        }
        self.map.write_ply(&dir.join("map.ply"), true)?;
        let summary = serde_json::json!({
            "map_points": self.map.len(),
            "pipelines": summaries,
        });
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_atomic(&dir.join("session.json"), text.as_bytes())
    }
}

fn check_stream(input: &SensorInput) -> Result<()> {
    for w in input.scans.windows(2) {
        if w[1].t1 < w[0].t1 {
            return Err(Error::Precondition(format!(
                "{} scans are not time-sorted at t = {}",
                input.slot.name(),
                w[1].t1
            )));
        }
        if w[1].t1 - w[0].t1 > MAX_STREAM_GAP {
            return Err(Error::Session(format!(
                "{} stream gap of {:.3} s at t = {}",
                input.slot.name(),
                w[1].t1 - w[0].t1,
                w[0].t1
            )));
        }
    }
    Ok(())
}

/// Runs the primary sensor alone, or both sensors over one shared map.
///
/// The primary starts ACTIVE at its initial pose and seeds the map with its
/// first scan. A secondary stays in WARMUP until the primary has been
/// ACTIVE for `dual.warmup` seconds and the map holds `dual.min_map_points`
/// points; it is then registered into the map by ICP from the nominal mount
/// offset. Events are ordered by scan-end time, primary first on ties.
pub fn run_session(
    primary: &SensorInput,
    secondary: Option<&SensorInput>,
    params: &SessionParams,
) -> Result<SessionOutput> {
    check_stream(primary)?;
    if let Some(s) = secondary {
        check_stream(s)?;
    }
    let mut map = VoxelMap::new(params.map);
    let mut p1 = PipelineHandle::started(primary.slot, 0.0, primary.initial_pose, &params.initial);
    let mut p2 = secondary.map(|s| PipelineHandle::warmup(s.slot));
    let empty = [];
    let scans2 = secondary.map(|s| s.scans).unwrap_or(&empty);
    let (mut i, mut j) = (0, 0);
    while i < primary.scans.len() || j < scans2.len() {
        let take_primary = match (primary.scans.get(i), scans2.get(j)) {
            (Some(a), Some(b)) => a.t1 <= b.t1,
            (Some(_), None) => true,
            _ => false,
        };
        if take_primary {
            let scan = &primary.scans[i];
            i += 1;
            let bootstrap = map.is_empty() && p1.status == PipelineStatus::Active;
            p1.process_scan(scan, primary, &mut map, params, bootstrap)?;
            continue;
        }
        let scan = &scans2[j];
        j += 1;
        let (Some(h2), Some(input2)) = (p2.as_mut(), secondary) else {
            continue;
        };
        if h2.status != PipelineStatus::Warmup {
            h2.process_scan(scan, input2, &mut map, params, false)?;
            continue;
        }
        let warmed_up = p1.status == PipelineStatus::Active
            && p1.active_since.is_some_and(|t| scan.t1 - t >= params.dual.warmup)
            && map.len() >= params.dual.min_map_points;
        if !warmed_up || h2.init_attempts >= params.dual.max_init_attempts {
            continue;
        }
        let Some(s1) = &p1.state else { continue };
        let guess = s1.pose() * primary.mount_offset.inverse() * input2.mount_offset;
        let velocity = s1.velocity;
        h2.try_initialize(scan, input2, &mut map, &guess, &velocity, params)?;
    }
    let mut pipelines = vec![PipelineOutput::from(p1)];
    pipelines.extend(p2.map(PipelineOutput::from));
    Ok(SessionOutput { pipelines, map })
}

/// Runs `dataset` in `mode` with the filter settings of `config`.
///
/// `single` and `single+vio` process `config.run.single_sensor`; `dual` uses
/// L1 as primary and L2 as secondary. Missing streams are configuration
/// errors.
pub fn run_dataset(dataset: &Dataset, config: &RunConfig, mode: RunMode) -> Result<SessionOutput> {
    config.filter.validate()?;
    config.dual.validate()?;
    let use_vio = mode == RunMode::SingleVio;
    let params = SessionParams::new(&config.filter, &config.dual, &dataset.manifest, use_vio);
    let missing = |slot: SensorSlot| Error::Config(format!("dataset has no {} sensor streams", slot.name()));
    match mode {
        RunMode::Single | RunMode::SingleVio => {
            let slot = config.run.single_sensor;
            let input = SensorInput::from_dataset(dataset, slot).ok_or_else(|| missing(slot))?;
            if use_vio && input.vio.is_empty() {
                return Err(Error::Config(format!(
                    "mode single+vio needs a VIO stream for {}",
                    slot.name()
                )));
            }
            run_session(&input, None, &params)
        }
        RunMode::Dual => {
            let l1 = SensorInput::from_dataset(dataset, SensorSlot::L1).ok_or_else(|| missing(SensorSlot::L1))?;
            let l2 = SensorInput::from_dataset(dataset, SensorSlot::L2).ok_or_else(|| missing(SensorSlot::L2))?;
            run_session(&l1, Some(&l2), &params)
        }
    }
}
