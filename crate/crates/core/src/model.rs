//! Bilinear multi-relational embedding.
//!
//! Entities are `d`-dimensional vectors. Each relation is a normal linear map
//! `W_r` stored as `d` numbers: `d/2` blocks `[[a, -b], [b, a]]` along the
//! diagonal, with block `j` read from `(a, b) = (w[2j], w[2j+1])`. The score
//! of `(h, r, t)` is `v_hᵀ W_r v_t`; per block this is
//! `a·(h₀t₀ + h₁t₁) + b·(h₁t₀ − h₀t₁)`.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::negatives::LabeledTriple;
use crate::scalar::Scalar;
use crate::seed::rng;
use crate::vocab::{EntityId, RelationId, Triple, Vocabulary};

/// Shape of the per-relation blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RelationForm {
    /// Full `[[a, -b], [b, a]]` blocks.
    #[default]
    Rotational,
    /// `b` held at zero: purely diagonal maps (ablation).
    Diagonal,
}

impl std::str::FromStr for RelationForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotational" => Ok(RelationForm::Rotational),
            "diagonal" => Ok(RelationForm::Diagonal),
            other => Err(Error::Config(format!("unknown relation form `{other}`"))),
        }
    }
}

impl std::fmt::Display for RelationForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RelationForm::Rotational => "rotational",
            RelationForm::Diagonal => "diagonal",
        })
    }
}

/// Entity vectors and relation maps, bound to a vocabulary by fingerprint.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<T> {
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    entity: Vec<T>,
    relation: Vec<T>,
    fingerprint: u64,
    form: RelationForm,
}

/// Gradient restricted to the rows it touches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseGradient<T> {
    pub entities: BTreeMap<EntityId, Vec<T>>,
    pub relations: BTreeMap<RelationId, Vec<T>>,
}

impl<T: Scalar> SparseGradient<T> {
    pub fn new() -> Self {
        SparseGradient {
            entities: BTreeMap::new(),
            relations: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty()
    }

    pub fn clear(&mut self) {
        self.entities.clear();
        self.relations.clear();
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!("dimension must be a positive even number, got {dim}")));
    }
    Ok(())
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid without overflow.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> EmbeddingModel<T> {
    /// All-zero parameters.
    pub fn zeros(dim: usize, vocab: &Vocabulary) -> Result<Self> {
        check_dim(dim)?;
        Ok(EmbeddingModel {
            dim,
            num_entities: vocab.num_entities(),
            num_relations: vocab.num_relations(),
            entity: vec![T::zero(); vocab.num_entities() * dim],
            relation: vec![T::zero(); vocab.num_relations() * dim],
            fingerprint: vocab.fingerprint(),
            form: RelationForm::Rotational,
        })
    }

    /// Seeded initialization: entity components uniform in `±6/√d`, relation
    /// blocks near identity (`a ≈ 1`, `b ≈ 0`, noise of width 0.02).
    pub fn init(dim: usize, vocab: &Vocabulary, form: RelationForm, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(dim, vocab)?;
        m.form = form;
        let mut r = rng(seed);
        let bound = 6.0 / (dim as f64).sqrt();
        for x in m.entity.iter_mut() {
            *x = T::from_f64_lossy(r.random_range(-bound..bound));
        }
        for pair in m.relation.chunks_exact_mut(2) {
            pair[0] = T::from_f64_lossy(1.0 + r.random_range(-0.01..0.01));
            let b = r.random_range(-0.01..0.01);
            pair[1] = match form {
                RelationForm::Rotational => T::from_f64_lossy(b),
                RelationForm::Diagonal => T::zero(),
            };
        }
        Ok(m)
    }

    /// Rebuilds a model from raw parameter arrays (row-major).
    pub fn from_parts(
        dim: usize,
        num_entities: usize,
        num_relations: usize,
        entity: Vec<T>,
        relation: Vec<T>,
        fingerprint: u64,
    ) -> Result<Self> {
        check_dim(dim)?;
        if entity.len() != num_entities * dim || relation.len() != num_relations * dim {
            return Err(Error::Config("parameter arrays do not match the declared shape".into()));
        }
        Ok(EmbeddingModel {
            dim,
            num_entities,
            num_relations,
            entity,
            relation,
            fingerprint,
            form: RelationForm::Rotational,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn form(&self) -> RelationForm {
        self.form
    }

    pub fn set_form(&mut self, form: RelationForm) {
        self.form = form;
    }

    pub fn entity_params(&self) -> &[T] {
        &self.entity
    }

    pub fn relation_params(&self) -> &[T] {
        &self.relation
    }

    pub fn entity_row(&self, e: EntityId) -> &[T] {
        &self.entity[e.index() * self.dim..(e.index() + 1) * self.dim]
    }

    pub fn relation_row(&self, r: RelationId) -> &[T] {
        &self.relation[r.index() * self.dim..(r.index() + 1) * self.dim]
    }

    pub fn entity_row_mut(&mut self, e: EntityId) -> &mut [T] {
        &mut self.entity[e.index() * self.dim..(e.index() + 1) * self.dim]
    }

    pub fn relation_row_mut(&mut self, r: RelationId) -> &mut [T] {
        &mut self.relation[r.index() * self.dim..(r.index() + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.entity.iter().chain(&self.relation).all(|x| x.is_finite())
    }

    pub fn check_triple(&self, t: &Triple) -> Result<()> {
        for (id, len) in [
            (t.head.index(), self.num_entities),
            (t.tail.index(), self.num_entities),
        ] {
            if id >= len {
                return Err(Error::UnknownId { id, len });
            }
        }
        if t.relation.index() >= self.num_relations {
            return Err(Error::UnknownId {
                id: t.relation.index(),
                len: self.num_relations,
            });
        }
        Ok(())
    }

    /// `v_hᵀ W_r v_t`.
    pub fn score(&self, t: &Triple) -> Result<T> {
        self.check_triple(t)?;
        Ok(self.score_unchecked(t))
    }

    pub(crate) fn score_unchecked(&self, t: &Triple) -> T {
        let h = self.entity_row(t.head);
        let w = self.relation_row(t.relation);
        let v = self.entity_row(t.tail);
        let mut acc = T::zero();
        for j in (0..self.dim).step_by(2) {
            let (a, b) = (w[j], w[j + 1]);
            acc = acc + a * (h[j] * v[j] + h[j + 1] * v[j + 1]) + b * (h[j + 1] * v[j] - h[j] * v[j + 1]);
        }
        acc
    }

    /// `v_hᵀ W_r` as a vector; `score(h, r, ·)` is its dot product with `v_t`.
    pub fn project_head(&self, head: EntityId, relation: RelationId) -> Vec<T> {
        let h = self.entity_row(head);
        let w = self.relation_row(relation);
        let mut out = vec![T::zero(); self.dim];
        for j in (0..self.dim).step_by(2) {
            let (a, b) = (w[j], w[j + 1]);
            out[j] = a * h[j] + b * h[j + 1];
            out[j + 1] = a * h[j + 1] - b * h[j];
        }
        out
    }

    /// `W_r v_t` as a vector; `score(·, r, t)` is its dot product with `v_h`.
    pub fn project_tail(&self, relation: RelationId, tail: EntityId) -> Vec<T> {
        let v = self.entity_row(tail);
        let w = self.relation_row(relation);
        let mut out = vec![T::zero(); self.dim];
        for j in (0..self.dim).step_by(2) {
            let (a, b) = (w[j], w[j + 1]);
            out[j] = a * v[j] - b * v[j + 1];
            out[j + 1] = b * v[j] + a * v[j + 1];
        }
        out
    }

    /// Dense `d × d` matrix of relation `r`, row-major.
    pub fn dense_relation(&self, r: RelationId) -> Vec<T> {
        let w = self.relation_row(r);
        let d = self.dim;
        let mut m = vec![T::zero(); d * d];
        for j in (0..d).step_by(2) {
            let (a, b) = (w[j], w[j + 1]);
            m[j * d + j] = a;
            m[j * d + j + 1] = -b;
            m[(j + 1) * d + j] = b;
            m[(j + 1) * d + j + 1] = a;
        }
        m
    }

    /// `-log σ(y · f(h, r, t))`, computed as `softplus(-y·f)`.
    pub fn loss(&self, example: &LabeledTriple) -> Result<T> {
        let f = self.score(&example.triple)?;
        Ok(softplus(-example.label.sign::<T>() * f))
    }

    /// Loss and its gradient with respect to `v_h`, `v_t` and `W_r`.
    pub fn gradient(&self, example: &LabeledTriple) -> Result<(T, SparseGradient<T>)> {
        self.check_triple(&example.triple)?;
        let mut g = SparseGradient::new();
        let loss = self.accumulate_gradient(example, T::one(), &mut g);
        Ok((loss, g))
    }

    /// Adds `scale · ∇loss` into `acc` and returns the loss. Ids are assumed
    /// in range.
    pub(crate) fn accumulate_gradient(
        &self,
        example: &LabeledTriple,
        scale: T,
        acc: &mut SparseGradient<T>,
    ) -> T {
        let t = example.triple;
        let y = example.label.sign::<T>();
        let f = self.score_unchecked(&t);
        let loss = softplus(-y * f);
        // dL/df = -y σ(-y f)
        let coeff = -y * sigmoid(-y * f) * scale;
        let d = self.dim;
        let h = self.entity_row(t.head);
        let w = self.relation_row(t.relation);
        let v = self.entity_row(t.tail);

        let mut gh = vec![T::zero(); d];
        let mut gt = vec![T::zero(); d];
        let mut gw = vec![T::zero(); d];
        for j in (0..d).step_by(2) {
            let (a, b) = (w[j], w[j + 1]);
            gh[j] = coeff * (a * v[j] - b * v[j + 1]);
            gh[j + 1] = coeff * (b * v[j] + a * v[j + 1]);
            gt[j] = coeff * (a * h[j] + b * h[j + 1]);
            gt[j + 1] = coeff * (a * h[j + 1] - b * h[j]);
            gw[j] = coeff * (h[j] * v[j] + h[j + 1] * v[j + 1]);
            gw[j + 1] = match self.form {
                RelationForm::Rotational => coeff * (h[j + 1] * v[j] - h[j] * v[j + 1]),
                RelationForm::Diagonal => T::zero(),
            };
        }
        add_row(acc.entities.entry(t.head).or_insert_with(|| vec![T::zero(); d]), &gh);
        add_row(acc.entities.entry(t.tail).or_insert_with(|| vec![T::zero(); d]), &gt);
        add_row(acc.relations.entry(t.relation).or_insert_with(|| vec![T::zero(); d]), &gw);
        loss
    }
}

fn add_row<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

/// Bytes needed for the parameters: `(|E| + |R|) · d · 8`.
pub fn memory_bytes(num_entities: u64, num_relations: u64, dim: u64) -> u64 {
    (num_entities + num_relations) * dim * 8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Vocabulary;

    fn vocab(entities: usize, relations: usize) -> Vocabulary {
        Vocabulary::from_symbols(
            (0..entities).map(|i| format!("e{i}")).collect(),
            (0..relations).map(|i| format!("r{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_and_orthogonal_scores() {
        let v = vocab(2, 1);
        let mut m = EmbeddingModel::<f64>::zeros(2, &v).unwrap();
        m.relation_row_mut(RelationId(0)).copy_from_slice(&[1.0, 0.0]);
        m.entity_row_mut(EntityId(0)).copy_from_slice(&[1.0, 0.0]);
        m.entity_row_mut(EntityId(1)).copy_from_slice(&[0.0, 1.0]);
        assert_eq!(m.score(&Triple::new(0, 0, 0)).unwrap(), 1.0);
        assert_eq!(m.score(&Triple::new(0, 0, 1)).unwrap(), 0.0);
        assert!(matches!(m.score(&Triple::new(0, 0, 2)), Err(Error::UnknownId { id: 2, .. })));
        assert!(m.score(&Triple::new(0, 1, 0)).is_err());
    }

    #[test]
    fn loss_closed_forms() {
        let v = vocab(1, 1);
        let mut m = EmbeddingModel::<f64>::zeros(2, &v).unwrap();
        let t = Triple::new(0, 0, 0);
        let ln2 = std::f64::consts::LN_2;
        assert!((m.loss(&LabeledTriple::positive(t)).unwrap() - ln2).abs() < 1e-15);
        assert!((m.loss(&LabeledTriple::negative(t)).unwrap() - ln2).abs() < 1e-15);
        // f = a·|v|² with v = (1, 0)
        m.entity_row_mut(EntityId(0)).copy_from_slice(&[1.0, 0.0]);
        m.relation_row_mut(RelationId(0)).copy_from_slice(&[40.0, 0.0]);
        assert!(m.loss(&LabeledTriple::positive(t)).unwrap() < 1e-12);
        m.relation_row_mut(RelationId(0)).copy_from_slice(&[2.0, 0.0]);
        let expected = (1.0 + 2f64.exp()).ln();
        assert!((m.loss(&LabeledTriple::negative(t)).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 2.126928).abs() < 1e-6);
        // Far beyond exp overflow.
        m.relation_row_mut(RelationId(0)).copy_from_slice(&[1e4, 0.0]);
        assert_eq!(m.loss(&LabeledTriple::negative(t)).unwrap(), 1e4);
    }

    #[test]
    fn saturated_positive_has_vanishing_gradient() {
        let v = vocab(1, 1);
        let mut m = EmbeddingModel::<f64>::zeros(2, &v).unwrap();
        m.entity_row_mut(EntityId(0)).copy_from_slice(&[1.0, 0.0]);
        m.relation_row_mut(RelationId(0)).copy_from_slice(&[800.0, 0.0]);
        let (_, g) = m.gradient(&LabeledTriple::positive(Triple::new(0, 0, 0))).unwrap();
        let norm: f64 = g.entities.values().chain(g.relations.values()).flatten().map(|x| x * x).sum();
        assert!(norm < 1e-300);
    }

    #[test]
    fn gradient_touches_only_triple_rows() {
        let v = vocab(5, 2);
        let m = EmbeddingModel::<f64>::init(4, &v, RelationForm::Rotational, 1).unwrap();
        let (_, g) = m.gradient(&LabeledTriple::positive(Triple::new(1, 1, 3))).unwrap();
        assert_eq!(g.entities.keys().copied().collect::<Vec<_>>(), vec![EntityId(1), EntityId(3)]);
        assert_eq!(g.relations.keys().copied().collect::<Vec<_>>(), vec![RelationId(1)]);
    }

    #[test]
    fn diagonal_form_freezes_b() {
        let v = vocab(3, 1);
        let m = EmbeddingModel::<f64>::init(4, &v, RelationForm::Diagonal, 4).unwrap();
        assert!(m.relation_params().chunks(2).all(|p| p[1] == 0.0));
        let (_, g) = m.gradient(&LabeledTriple::positive(Triple::new(0, 0, 1))).unwrap();
        assert!(g.relations[&RelationId(0)].chunks(2).all(|p| p[1] == 0.0));
    }

    #[test]
    fn projections_agree_with_score() {
        let v = vocab(4, 2);
        let m = EmbeddingModel::<f64>::init(6, &v, RelationForm::Rotational, 9).unwrap();
        let t = Triple::new(2, 1, 3);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let s = m.score(&t).unwrap();
        assert!((dot(&m.project_head(t.head, t.relation), m.entity_row(t.tail)) - s).abs() < 1e-12);
        assert!((dot(&m.project_tail(t.relation, t.tail), m.entity_row(t.head)) - s).abs() < 1e-12);
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(EmbeddingModel::<f64>::zeros(3, &vocab(1, 1)).is_err());
        assert!(EmbeddingModel::<f32>::zeros(0, &vocab(1, 1)).is_err());
    }

    #[test]
    fn memory_formula() {
        assert_eq!(memory_bytes(117, 3, 100), 96_000);
        assert_eq!(memory_bytes(1, 1, 1), 16);
        assert_eq!(memory_bytes(117, 3, 200), 2 * memory_bytes(117, 3, 100));
    }

    #[test]
    fn single_precision_model_scores() {
        let v = vocab(3, 1);
        let m = EmbeddingModel::<f32>::init(4, &v, RelationForm::Rotational, 2).unwrap();
        let m64 = EmbeddingModel::<f64>::init(4, &v, RelationForm::Rotational, 2).unwrap();
        let t = Triple::new(0, 0, 2);
        assert!((f64::from(m.score(&t).unwrap()) - m64.score(&t).unwrap()).abs() < 1e-5);
    }
}
