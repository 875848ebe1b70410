//! Finite-difference verification of the analytic gradients used in training.
//!
//! Each check draws a seeded random batch and head, computes the analytic
//! parameter gradient, and compares every coordinate with a central difference
//! of step `1e-5 * max(1, |θ|)`. Contrastive checks freeze the pair selection
//! made at the base point, and points whose similarities sit within
//! [`BOUNDARY_GAP`] of a clamp or hinge are redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::LabelSet;
use crate::embedding::l2_normalize;
use crate::error::Result;
use crate::loss::{LossKind, OfcConfig};
use crate::mining::{MiningConfig, PositiveRule};
use crate::trainer::{
    classifier_batch, ClassifierHead, ContrastiveBatch, PairSelection, ProjectionHead,
};

/// Minimum distance from any clamp boundary for an accepted check point.
pub const BOUNDARY_GAP: f64 = 1e-3;

const D_IN: usize = 8;
const D_HIDDEN: usize = 7;
const D_PROJ: usize = 5;
const LABELS: usize = 3;
const BATCH: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradComponent {
    /// A fixed random linear functional of the projection output.
    Projection,
    ProjectionOfc,
    ProjectionOc,
    ProjectionCs,
    ClassifierBce,
}

impl GradComponent {
    pub const ALL: [GradComponent; 5] = [
        GradComponent::Projection,
        GradComponent::ProjectionOfc,
        GradComponent::ProjectionOc,
        GradComponent::ProjectionCs,
        GradComponent::ClassifierBce,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub component: GradComponent,
    pub seed: u64,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`; the floor keeps vanishing gradients from
/// turning rounding noise into large relative errors.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn grad_check(component: GradComponent, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    grad_check_perturbed(component, seed, tolerance, 0.0)
}

/// As [`grad_check`], with `perturbation` added to every analytic coordinate.
/// A nonzero perturbation must make the check fail; this guards the checker itself.
pub fn grad_check_perturbed(
    component: GradComponent,
    seed: u64,
    tolerance: f64,
    perturbation: f64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = loop {
        let p = Point::draw(component, &mut rng)?;
        if p.away_from_boundaries()? {
            break p;
        }
    };
    let analytic = point.analytic()?;
    let mut params = point.flat_params();
    let mut max_err: f64 = 0.0;
    for i in 0..params.len() {
        let x = params[i];
        let h = 1e-5 * x.abs().max(1.0);
        params[i] = x + h;
        let up = point.loss_at(&params)?;
        params[i] = x - h;
        let down = point.loss_at(&params)?;
        params[i] = x;
        let numeric = (up - down) / (2.0 * h);
        max_err = max_err.max(relative_error(analytic[i] + perturbation, numeric));
    }
    Ok(GradCheckReport {
        component,
        seed,
        parameters_checked: params.len(),
        max_relative_error: max_err,
        tolerance,
        passed: max_err <= tolerance,
    })
}

struct Point {
    component: GradComponent,
    projection: ProjectionHead,
    classifier: ClassifierHead,
    xs: Vec<Vec<f64>>,
    labels: Vec<LabelSet>,
    targets: Vec<Vec<bool>>,
    functional: Vec<f64>,
    ofc: OfcConfig,
    mining: MiningConfig,
    selection: Option<PairSelection>,
}

fn random_head(rng: &mut ChaCha8Rng) -> ProjectionHead {
    let mut head = ProjectionHead::init(D_IN, D_HIDDEN, D_PROJ, rng);
    head.b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    head.b2.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    head
}

impl Point {
    fn draw(component: GradComponent, rng: &mut ChaCha8Rng) -> Result<Self> {
        let projection = random_head(rng);
        let mut classifier = ClassifierHead::init(D_PROJ, LABELS, rng);
        classifier.b.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let xs = (0..BATCH)
            .map(|_| {
                let v: Vec<f64> = (0..D_IN).map(|_| rng.gen_range(-1.0..1.0)).collect();
                l2_normalize(&v).map(|e| e.into_inner())
            })
            .collect::<Result<Vec<_>>>()?;
        // Labels cycle through three singleton classes so both polarities exist.
        let labels: Vec<LabelSet> = (0..BATCH)
            .map(|i| LabelSet::from_indices([(i + rng.gen_range(0..2)) % LABELS]))
            .collect();
        let targets = (0..BATCH)
            .map(|_| (0..LABELS).map(|_| rng.gen_bool(0.4)).collect())
            .collect();
        let functional = (0..D_PROJ).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ofc = OfcConfig {
            alpha: rng.gen_range(0.5..2.0),
            gamma: [0.0, 1.0, 2.0][rng.gen_range(0..3)],
            margin: rng.gen_range(0.3..0.9),
            ..OfcConfig::default()
        };
        let mining = MiningConfig {
            p: rng.gen_range(20.0..100.0),
            ..MiningConfig::default()
        };
        let mut point = Point {
            component,
            projection,
            classifier,
            xs,
            labels,
            targets,
            functional,
            ofc,
            mining,
            selection: None,
        };
        if let Some(kind) = point.loss_kind() {
            let fwd = point.contrastive(&point.projection)?;
            point.selection = Some(PairSelection::choose(kind, &fwd.pairs, &fwd.sims, &point.mining));
        }
        Ok(point)
    }

    fn loss_kind(&self) -> Option<LossKind> {
        match self.component {
            GradComponent::ProjectionOfc => Some(LossKind::Ofc),
            GradComponent::ProjectionOc => Some(LossKind::Oc),
            GradComponent::ProjectionCs => Some(LossKind::Cs),
            _ => None,
        }
    }

    fn xs(&self) -> Vec<&[f64]> {
        self.xs.iter().map(Vec::as_slice).collect()
    }

    fn contrastive(&self, head: &ProjectionHead) -> Result<ContrastiveBatch> {
        ContrastiveBatch::forward(head, &self.xs(), &self.labels, PositiveRule::Exact)
    }

    fn away_from_boundaries(&self) -> Result<bool> {
        let Some(sel) = &self.selection else {
            return Ok(true);
        };
        if sel.pos.is_empty() && sel.neg.is_empty() {
            return Ok(false);
        }
        let sims = self.contrastive(&self.projection)?.sims;
        let m = self.ofc.margin;
        let near = |s: f64, edge: f64| (s - edge).abs() < BOUNDARY_GAP;
        let clear = match sel.kind {
            LossKind::Ofc => {
                sel.pos.iter().all(|&i| !near(sims[i], 0.0) && sims[i].abs() < 1.0 - BOUNDARY_GAP)
                    && sel.neg.iter().all(|&i| !near(sims[i], m) && !near(sims[i], m - 1.0))
            }
            LossKind::Oc => sel.neg.iter().all(|&i| !near(sims[i], m)),
            LossKind::Cs => true,
        };
        Ok(clear)
    }

    fn flat_params(&self) -> Vec<f64> {
        let p = &self.projection;
        let mut out: Vec<f64> = [p.w1.data(), &p.b1, p.w2.data(), &p.b2].concat();
        if self.component == GradComponent::ClassifierBce {
            out.extend_from_slice(self.classifier.w.data());
            out.extend_from_slice(&self.classifier.b);
        }
        out
    }

    fn unflatten(&self, flat: &[f64]) -> (ProjectionHead, ClassifierHead) {
        let mut p = self.projection.clone();
        let mut c = self.classifier.clone();
        let mut it = flat.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().unwrap());
        fill(p.w1.data_mut());
        fill(&mut p.b1);
        fill(p.w2.data_mut());
        fill(&mut p.b2);
        if self.component == GradComponent::ClassifierBce {
            fill(c.w.data_mut());
            fill(&mut c.b);
        }
        (p, c)
    }

    fn loss_at(&self, flat: &[f64]) -> Result<f64> {
        let (p, c) = self.unflatten(flat);
        match self.component {
            GradComponent::Projection => {
                let z = p.forward(&self.xs[0])?.z;
                Ok(z.iter().zip(&self.functional).map(|(a, b)| a * b).sum())
            }
            GradComponent::ClassifierBce => {
                Ok(classifier_batch(&p, &c, &self.xs(), &self.targets)?.loss)
            }
            _ => {
                let fwd = self.contrastive(&p)?;
                let sel = self.selection.as_ref().expect("contrastive point has a selection");
                Ok(sel.loss(&fwd.sims, &self.ofc)?.value)
            }
        }
    }

    fn analytic(&self) -> Result<Vec<f64>> {
        let flatten = |p: &ProjectionHead| [p.w1.data(), &p.b1, p.w2.data(), &p.b2].concat();
        match self.component {
            GradComponent::Projection => {
                let cache = self.projection.forward(&self.xs[0])?;
                let mut grads = self.projection.zeros_like();
                self.projection
                    .backward(&self.xs[0], &cache, &self.functional, &mut grads);
                Ok(flatten(&grads))
            }
            GradComponent::ClassifierBce => {
                let step = classifier_batch(&self.projection, &self.classifier, &self.xs(), &self.targets)?;
                let mut out = flatten(&step.projection_grads);
                out.extend_from_slice(step.classifier_grads.w.data());
                out.extend_from_slice(&step.classifier_grads.b);
                Ok(out)
            }
            _ => {
                let fwd = self.contrastive(&self.projection)?;
                let sel = self.selection.as_ref().expect("contrastive point has a selection");
                let loss = sel.loss(&fwd.sims, &self.ofc)?;
                Ok(flatten(&fwd.backward(&self.projection, &self.xs(), &loss)))
            }
        }
    }
}
