//! Command-driven engine state.
//!
//! A [`Session`] owns a dataset, the grouping hierarchy, sparsification and
//! rendering settings. Commands are applied one at a time; a failing command
//! leaves the session untouched. The epoch counts changes that invalidate the
//! visibility mask, and the mask is rebuilt lazily before the next render.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assess::{assess_visibility, GroupVisibilityReport};
use crate::color::Rgba;
use crate::error::{Error, Result};
use crate::grouping::{
    assign_groups, cascade_down, cascade_up, group_histogram, linearize, CascadeOutcome,
    GroupAssignment, Hierarchy, Histogram, LinearPredicate, RangePath, RangeSummary,
};
use crate::mask::{
    build_visibility_mask, TransferFunction2D, VisibilityMask, DEFAULT_TF_RESOLUTION,
};
use crate::render::{
    render_frame, render_id_only, BlendWeights, Camera, FrameSet, IdGate, RawTransferFunction,
    RenderOptions, Scene,
};
use crate::sparsify::{aggregate_importance, sparsify_groups, ImportanceFunction, SparsifyParams};
use crate::voldata::{
    compute_gradients, generate_synthetic, load_dataset, AttributeDef, Dataset, GradientField,
    GridDims, InstanceTable, RawVolume, SceneSpec, SegmentationVolume,
};

/// Where a dataset comes from, kept so exported sessions can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Path { path: PathBuf },
    Synthetic { spec: SceneSpec, seed: u64 },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Path { path } => load_dataset(path),
            DatasetSource::Synthetic { spec, seed } => generate_synthetic(spec, *seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Command {
    LoadDataset {
        source: DatasetSource,
    },
    SetHierarchy {
        hierarchy: Hierarchy,
    },
    SetFraction {
        path: RangePath,
        fraction: f64,
    },
    SetLock {
        path: RangePath,
        locked: bool,
    },
    SetSparsifyParams {
        params: SparsifyParams,
    },
    SetBlendWeights {
        weights: BlendWeights,
    },
    #[serde(rename = "setRawTF")]
    SetRawTf {
        tf: RawTransferFunction,
    },
    SetCamera {
        camera: Camera,
    },
    SetRenderOptions {
        options: RenderOptions,
    },
    RequestFrame,
    RequestAssessment,
}

#[derive(Debug, Clone)]
pub enum Event {
    /// A setting changed; carries the epoch after the change.
    Updated {
        epoch: u64,
        cascade: Option<CascadeOutcome>,
    },
    Frame(Box<FrameSet>),
    Report(GroupVisibilityReport),
}

#[derive(Debug, Clone)]
struct Loaded {
    source: Option<DatasetSource>,
    raw: Arc<RawVolume>,
    seg: Arc<SegmentationVolume>,
    gradients: Arc<GradientField>,
    table: InstanceTable,
}

#[derive(Debug, Clone)]
struct MaskCache {
    epoch: u64,
    mask: Arc<VisibilityMask>,
    tf: Arc<TransferFunction2D>,
    gate: Arc<IdGate>,
}

#[derive(Debug, Clone)]
pub struct Session {
    data: Option<Loaded>,
    hierarchy: Hierarchy,
    preds: Vec<LinearPredicate>,
    assignment: GroupAssignment,
    sparsify: SparsifyParams,
    weights: BlendWeights,
    raw_tf: RawTransferFunction,
    camera: Camera,
    options: RenderOptions,
    tf_resolution: usize,
    epoch: u64,
    /// Leaf colors by path key, so colors survive edits elsewhere in the tree.
    colors: BTreeMap<String, Rgba>,
    cache: Option<MaskCache>,
    last_report: Option<GroupVisibilityReport>,
}

impl Default for Session {
    fn default() -> Self {
        Session::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub instances: usize,
    pub schema: Vec<AttributeDef>,
    pub source: Option<DatasetSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub group: usize,
    pub key: String,
    pub color: Rgba,
    pub fraction: f64,
    pub size: usize,
    pub hidden: usize,
}

/// Snapshot of everything a client needs to draw its controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub epoch: u64,
    pub dataset: Option<DatasetSummary>,
    pub hierarchy: Hierarchy,
    pub ranges: Vec<RangeSummary>,
    pub groups: Vec<GroupInfo>,
    /// Per group, over the attribute tested last in its predicate.
    pub histograms: Vec<Histogram>,
    pub sparsify: SparsifyParams,
    pub weights: BlendWeights,
    pub raw_tf: RawTransferFunction,
    pub camera: Camera,
    pub options: RenderOptions,
    pub last_report: Option<GroupVisibilityReport>,
}

/// Everything needed to rebuild a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionExport {
    pub dataset: Option<DatasetSource>,
    pub hierarchy: Hierarchy,
    pub sparsify: SparsifyParams,
    pub weights: BlendWeights,
    pub raw_tf: RawTransferFunction,
    pub camera: Camera,
    pub options: RenderOptions,
    pub colors: BTreeMap<String, Rgba>,
    /// Ids hidden by sparsification at export time.
    pub hidden: Vec<u32>,
}

const HISTOGRAM_BINS: usize = 16;

impl Session {
    pub fn new() -> Self {
        Session {
            data: None,
            hierarchy: Hierarchy::default(),
            preds: Vec::new(),
            assignment: GroupAssignment::background(0, 0),
            sparsify: SparsifyParams::default(),
            weights: BlendWeights::default(),
            raw_tf: RawTransferFunction::default(),
            camera: Camera::framing(
                &GridDims::cube(1).expect("unit grid"),
                [0.0, 0.0, 1.0],
                256,
                256,
            ),
            options: RenderOptions::default(),
            tf_resolution: DEFAULT_TF_RESOLUTION,
            epoch: 0,
            colors: BTreeMap::new(),
            cache: None,
            last_report: None,
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn predicates(&self) -> &[LinearPredicate] {
        &self.preds
    }

    pub fn assignment(&self) -> &GroupAssignment {
        &self.assignment
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn table(&self) -> Option<&InstanceTable> {
        self.data.as_ref().map(|d| &d.table)
    }

    pub fn last_report(&self) -> Option<&GroupVisibilityReport> {
        self.last_report.as_ref()
    }

    /// Applies `command`. On error the session is unchanged.
    pub fn apply(&mut self, command: Command) -> Result<Vec<Event>> {
        let mut next = self.clone();
        let events = next.apply_in_place(command)?;
        *self = next;
        Ok(events)
    }

    fn apply_in_place(&mut self, command: Command) -> Result<Vec<Event>> {
        let mut cascade = None;
        match command {
            Command::LoadDataset { source } => {
                let dataset = source.load()?;
                self.load(dataset, Some(source))?;
            }
            Command::SetHierarchy { hierarchy } => self.set_hierarchy(hierarchy)?,
            Command::SetFraction { path, fraction } => {
                let sizes = self.assignment.sizes();
                let outcome = cascade_down(&mut self.hierarchy, &path, fraction, &sizes)?;
                if outcome != CascadeOutcome::AllLocked {
                    self.regroup()?;
                }
                cascade = Some(outcome);
            }
            Command::SetLock { path, locked } => {
                let r = self
                    .hierarchy
                    .range_mut(&path)
                    .ok_or_else(|| Error::NoSuchPath(path.to_string()))?;
                r.locked = locked;
            }
            Command::SetSparsifyParams { params } => {
                params.validate()?;
                let reseed = params.seed != self.sparsify.seed;
                self.sparsify = params;
                if reseed {
                    if let Some(d) = &mut self.data {
                        d.table.shuffle(params.seed);
                    }
                }
                self.resparsify()?;
            }
            Command::SetBlendWeights { weights } => {
                weights.validate()?;
                self.weights = weights;
            }
            Command::SetRawTf { tf } => self.raw_tf = tf,
            Command::SetCamera { camera } => {
                camera.validate()?;
                self.camera = camera;
            }
            Command::SetRenderOptions { options } => {
                options.validate()?;
                self.options = options;
            }
            Command::RequestFrame => {
                let (frame, report) = self.render()?;
                return Ok(vec![Event::Frame(Box::new(frame)), Event::Report(report)]);
            }
            Command::RequestAssessment => {
                return Ok(vec![Event::Report(self.assess()?)]);
            }
        }
        Ok(vec![Event::Updated {
            epoch: self.epoch,
            cascade,
        }])
    }

    /// Replaces the dataset, reshuffles with the current seed and regroups
    /// with the current hierarchy. The camera is reframed on the new volume.
    pub fn load(&mut self, dataset: Dataset, source: Option<DatasetSource>) -> Result<()> {
        self.hierarchy.validate(dataset.table.schema())?;
        let dims = dataset.dims();
        let gradients = compute_gradients(&dataset.raw);
        let mut table = dataset.table;
        table.shuffle(self.sparsify.seed);
        self.data = Some(Loaded {
            source,
            raw: Arc::new(dataset.raw),
            seg: Arc::new(dataset.seg),
            gradients: Arc::new(gradients),
            table,
        });
        self.camera = Camera::framing(
            &dims,
            [0.3, 0.4, 1.0],
            self.camera.width,
            self.camera.height,
        );
        self.regroup()
    }

    fn set_hierarchy(&mut self, mut hierarchy: Hierarchy) -> Result<()> {
        if let Some(d) = &self.data {
            hierarchy.validate(d.table.schema())?;
        }
        for path in hierarchy.leaf_paths() {
            let key = hierarchy.path_key(&path).unwrap_or_default();
            if let Some(c) = self.colors.get(&key) {
                if let Some(r) = hierarchy.range_mut(&path) {
                    r.color.get_or_insert(*c);
                }
            }
        }
        self.hierarchy = hierarchy;
        if let Some(d) = &mut self.data {
            // a new grouping starts from a clean visibility state
            d.table.reset_visibility();
        }
        self.regroup()
    }

    /// Relinearizes, reassigns groups, recomputes internal fractions and
    /// resparsifies.
    fn regroup(&mut self) -> Result<()> {
        let Some(data) = &self.data else {
            self.preds.clear();
            self.assignment = GroupAssignment::background(0, 0);
            self.bump();
            return Ok(());
        };
        let schema = data.table.schema();
        let mut preds = linearize(&self.hierarchy, schema)?;
        let assignment = assign_groups(&preds, &data.table)?;
        cascade_up(&mut self.hierarchy, &assignment.sizes());
        for p in &mut preds {
            if let Some(r) = self.hierarchy.range(&p.path) {
                p.visible_fraction = r.fraction;
            }
            self.colors.insert(p.key.clone(), p.color);
        }
        self.preds = preds;
        self.assignment = assignment;
        self.resparsify()
    }

    fn resparsify(&mut self) -> Result<()> {
        if let Some(data) = &mut self.data {
            let function = ImportanceFunction::new(
                &self.sparsify,
                &data.raw.dims,
                self.camera.eye,
                Some(&data.gradients),
            )?;
            let importance = aggregate_importance(&data.seg, &data.table, &function);
            sparsify_groups(&self.preds, &self.assignment, &importance, &mut data.table);
        }
        self.bump();
        Ok(())
    }

    fn bump(&mut self) {
        self.epoch += 1;
        self.cache = None;
        self.last_report = None;
    }

    fn ensure_mask(&mut self) -> Result<MaskCache> {
        if let Some(c) = &self.cache {
            if c.epoch == self.epoch {
                return Ok(c.clone());
            }
        }
        let data = self.data.as_ref().ok_or(Error::NoDataset)?;
        let mask = build_visibility_mask(&data.seg, &data.table, &self.assignment)?;
        let tf = TransferFunction2D::new(
            self.preds.iter().map(|p| p.color).collect(),
            self.tf_resolution,
        )?;
        let cache = MaskCache {
            epoch: self.epoch,
            mask: Arc::new(mask),
            tf: Arc::new(tf),
            gate: Arc::new(IdGate::new(&data.table, &self.assignment)),
        };
        self.cache = Some(cache.clone());
        Ok(cache)
    }

    /// The current visibility mask, rebuilt if the epoch moved on.
    pub fn mask(&mut self) -> Result<Arc<VisibilityMask>> {
        Ok(self.ensure_mask()?.mask)
    }

    pub fn transfer_function(&mut self) -> Result<Arc<TransferFunction2D>> {
        Ok(self.ensure_mask()?.tf)
    }

    fn with_scene<T>(&mut self, f: impl FnOnce(&Scene<'_>) -> Result<T>) -> Result<T> {
        let cache = self.ensure_mask()?;
        let data = self.data.as_ref().ok_or(Error::NoDataset)?;
        let scene = Scene {
            raw: &data.raw,
            seg: &data.seg,
            gradients: Some(&data.gradients),
            mask: &cache.mask,
            tf: &cache.tf,
            raw_tf: &self.raw_tf,
            gate: &cache.gate,
            weights: self.weights,
            options: self.options,
            epoch: self.epoch,
        };
        f(&scene)
    }

    /// Renders the current state and assesses the resulting ID buffer.
    pub fn render(&mut self) -> Result<(FrameSet, GroupVisibilityReport)> {
        let camera = self.camera;
        let frame = self.with_scene(|s| render_frame(s, &camera))?;
        let report = self.report_for(&frame.id)?;
        Ok((frame, report))
    }

    /// Assessment from an ID-only pass.
    pub fn assess(&mut self) -> Result<GroupVisibilityReport> {
        let camera = self.camera;
        let ids = self.with_scene(|s| render_id_only(s, &camera))?;
        self.report_for(&ids)
    }

    fn report_for(&mut self, ids: &crate::render::IdBuffer) -> Result<GroupVisibilityReport> {
        let data = self.data.as_ref().ok_or(Error::NoDataset)?;
        let report = assess_visibility(ids, &data.table, &self.assignment, self.epoch)?;
        self.last_report = Some(report.clone());
        Ok(report)
    }

    pub fn state(&self) -> SessionState {
        let sizes = self.assignment.sizes();
        let mut hierarchy = self.hierarchy.clone();
        let ranges = cascade_up(&mut hierarchy, &sizes);
        let groups = self
            .preds
            .iter()
            .map(|p| GroupInfo {
                group: p.group,
                key: p.key.clone(),
                color: p.color,
                fraction: p.visible_fraction,
                size: sizes.get(p.group).copied().unwrap_or(0),
                hidden: self.data.as_ref().map_or(0, |d| {
                    self.assignment
                        .members(p.group as u32)
                        .into_iter()
                        .filter(|&s| !d.table.visible()[s])
                        .count()
                }),
            })
            .collect();
        let histograms = self
            .data
            .as_ref()
            .map(|d| {
                self.preds
                    .iter()
                    .filter_map(|p| {
                        let attr = &p.conjuncts.last()?.attribute;
                        group_histogram(
                            &d.table,
                            &self.assignment,
                            p.group as u32,
                            attr,
                            HISTOGRAM_BINS,
                        )
                        .ok()
                    })
                    .collect()
            })
            .unwrap_or_default();
        SessionState {
            epoch: self.epoch,
            dataset: self.data.as_ref().map(|d| DatasetSummary {
                dims: d.raw.dims.shape(),
                spacing: d.raw.dims.spacing,
                instances: d.table.len(),
                schema: d.table.schema().attributes().to_vec(),
                source: d.source.clone(),
            }),
            hierarchy,
            ranges,
            groups,
            histograms,
            sparsify: self.sparsify,
            weights: self.weights,
            raw_tf: self.raw_tf.clone(),
            camera: self.camera,
            options: self.options,
            last_report: self.last_report.clone(),
        }
    }

    pub fn export(&self) -> SessionExport {
        SessionExport {
            dataset: self.data.as_ref().and_then(|d| d.source.clone()),
            hierarchy: self.hierarchy.clone(),
            sparsify: self.sparsify,
            weights: self.weights,
            raw_tf: self.raw_tf.clone(),
            camera: self.camera,
            options: self.options,
            colors: self.colors.clone(),
            hidden: self.data.as_ref().map_or_else(Vec::new, |d| {
                d.table
                    .ids()
                    .iter()
                    .zip(d.table.visible())
                    .filter_map(|(&id, &v)| (!v).then_some(id))
                    .collect()
            }),
        }
    }

    /// Rebuilds a session from an export, restoring the exported hidden set.
    pub fn import(export: SessionExport) -> Result<Session> {
        let mut s = Session::new();
        export.sparsify.validate()?;
        export.weights.validate()?;
        export.options.validate()?;
        export.camera.validate()?;
        s.sparsify = export.sparsify;
        s.weights = export.weights;
        s.raw_tf = export.raw_tf;
        s.options = export.options;
        s.colors = export.colors;
        s.hierarchy = export.hierarchy;
        s.camera = export.camera;
        if let Some(source) = export.dataset {
            let dataset = source.load()?;
            s.load(dataset, Some(source))?;
            s.camera = export.camera;
            if let Some(d) = &mut s.data {
                d.table.reset_visibility();
                for id in export.hidden {
                    let slot = d.table.slot(id).ok_or_else(|| {
                        Error::invalid("hidden", format!("unknown instance {id}"))
                    })?;
                    d.table.set_visible(slot, false);
                }
            }
            s.bump();
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::HierarchyNode;

    fn source() -> DatasetSource {
        DatasetSource::Synthetic {
            spec: SceneSpec::uniform_spheres(24, 30, 1.5),
            seed: 4,
        }
    }

    fn loaded() -> Session {
        let mut s = Session::new();
        s.apply(Command::LoadDataset { source: source() }).unwrap();
        s
    }

    fn by_volume() -> Hierarchy {
        Hierarchy::new(vec![HierarchyNode::new(
            "volume",
            &[(0.0, 15.0), (15.0, f64::INFINITY)],
        )])
    }

    #[test]
    fn epoch_moves_only_on_mask_changes() {
        let mut s = loaded();
        let e0 = s.epoch();
        s.apply(Command::SetHierarchy {
            hierarchy: by_volume(),
        })
        .unwrap();
        let e1 = s.epoch();
        assert!(e1 > e0);
        s.apply(Command::SetBlendWeights {
            weights: BlendWeights::new(0.5, 0.5, 0.5),
        })
        .unwrap();
        let cam = Camera::framing(&GridDims::cube(24).unwrap(), [1.0, 0.0, 0.0], 32, 32);
        s.apply(Command::SetCamera { camera: cam }).unwrap();
        assert_eq!(s.epoch(), e1);
        s.apply(Command::SetFraction {
            path: RangePath(vec![(0, 0)]),
            fraction: 0.5,
        })
        .unwrap();
        assert!(s.epoch() > e1);
    }

    #[test]
    fn failing_command_leaves_state() {
        let mut s = loaded();
        s.apply(Command::SetHierarchy {
            hierarchy: by_volume(),
        })
        .unwrap();
        let before = s.state();
        let bad = Hierarchy::new(vec![HierarchyNode::new("nope", &[(0.0, 1.0)])]);
        assert!(s.apply(Command::SetHierarchy { hierarchy: bad }).is_err());
        assert!(s
            .apply(Command::SetFraction {
                path: RangePath(vec![(0, 0)]),
                fraction: 2.0
            })
            .is_err());
        assert_eq!(s.state(), before);
    }

    #[test]
    fn frame_and_report_share_epoch() {
        let mut s = loaded();
        s.apply(Command::SetHierarchy {
            hierarchy: by_volume(),
        })
        .unwrap();
        let cam = Camera::framing(&GridDims::cube(24).unwrap(), [0.0, 0.0, 1.0], 24, 24);
        s.apply(Command::SetCamera { camera: cam }).unwrap();
        let events = s.apply(Command::RequestFrame).unwrap();
        let (Event::Frame(f), Event::Report(r)) = (&events[0], &events[1]) else {
            panic!("unexpected events");
        };
        assert_eq!(f.id.epoch, s.epoch());
        assert_eq!(r.epoch, s.epoch());
        for g in &r.groups {
            assert_eq!(g.visible_on_screen + g.hidden + g.occluded, g.total);
        }
    }

    #[test]
    fn requests_need_a_dataset() {
        let mut s = Session::new();
        assert!(matches!(
            s.apply(Command::RequestFrame),
            Err(Error::NoDataset)
        ));
    }

    #[test]
    fn colors_persist_by_path() {
        let mut s = loaded();
        let mut h = by_volume();
        h.roots[0].ranges[1].color = Some(Rgba::new(0.1, 0.2, 0.3, 1.0));
        s.apply(Command::SetHierarchy { hierarchy: h }).unwrap();
        let mut h2 = by_volume();
        h2.roots[0].ranges.remove(0);
        s.apply(Command::SetHierarchy { hierarchy: h2 }).unwrap();
        assert_eq!(s.predicates()[0].color, Rgba::new(0.1, 0.2, 0.3, 1.0));
    }

    #[test]
    fn export_import_roundtrip() {
        let mut s = loaded();
        s.apply(Command::SetHierarchy {
            hierarchy: by_volume(),
        })
        .unwrap();
        s.apply(Command::SetFraction {
            path: RangePath(vec![(0, 1)]),
            fraction: 0.3,
        })
        .unwrap();
        let text = serde_json::to_string(&s.export()).unwrap();
        let back = Session::import(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.export(), s.export());
        assert_eq!(
            back.table().unwrap().visible(),
            s.table().unwrap().visible()
        );
    }

    #[test]
    fn command_json_shape() {
        let c: Command =
            serde_json::from_str(r#"{"type":"setFraction","path":[[0,1]],"fraction":0.25}"#)
                .unwrap();
        assert_eq!(
            c,
            Command::SetFraction {
                path: RangePath(vec![(0, 1)]),
                fraction: 0.25
            }
        );
        let c: Command = serde_json::from_str(r#"{"type":"requestFrame"}"#).unwrap();
        assert_eq!(c, Command::RequestFrame);
        assert!(serde_json::from_str::<Command>(r#"{"type":"setRawTF","tf":[]}"#).is_err());
    }
}
