//! Fixed binary selection over the shared parameters.
//!
//! A mask is chosen once from the initial weights and never changes. Only
//! trunk weights are ever deselected: biases and head parameters always
//! train.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{MtlModel, ParamKind, ParamLayout, ParamVector};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MaskVariant {
    Dense,
    Psn,
    Random,
    Global,
    Reverse,
}

impl MaskVariant {
    pub const ALL: [MaskVariant; 5] = [
        MaskVariant::Dense,
        MaskVariant::Psn,
        MaskVariant::Random,
        MaskVariant::Global,
        MaskVariant::Reverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskVariant::Dense => "dense",
            MaskVariant::Psn => "psn",
            MaskVariant::Random => "random",
            MaskVariant::Global => "global",
            MaskVariant::Reverse => "reverse",
        }
    }

    /// Whether the variant is parameterized by a per-neuron `k`.
    pub fn uses_k(self) -> bool {
        matches!(self, MaskVariant::Psn | MaskVariant::Reverse)
    }
}

impl fmt::Display for MaskVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        MaskVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown mask variant `{s}` (expected one of: {})",
                    MaskVariant::ALL.map(MaskVariant::name).join(", ")
                )
            })
    }
}

/// The selection parameter a mask was built with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskParam {
    None,
    K(usize),
    Fraction(f64),
}

impl fmt::Display for MaskParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskParam::None => f.write_str("1"),
            MaskParam::K(k) => write!(f, "{k}"),
            MaskParam::Fraction(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    bits: Vec<bool>,
    selected: usize,
    variant: MaskVariant,
    param: MaskParam,
}

impl Mask {
    fn from_bits(bits: Vec<bool>, variant: MaskVariant, param: MaskParam) -> Self {
        let selected = bits.iter().filter(|&&b| b).count();
        Self {
            bits,
            selected,
            variant,
            param,
        }
    }

    pub fn dense(len: usize) -> Self {
        Self::from_bits(vec![true; len], MaskVariant::Dense, MaskParam::None)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn selected_count(&self) -> usize {
        self.selected
    }

    pub fn variant(&self) -> MaskVariant {
        self.variant
    }

    pub fn param(&self) -> MaskParam {
        self.param
    }

    pub fn is_dense(&self) -> bool {
        self.selected == self.bits.len()
    }

    /// Fraction of trunk weights left trainable.
    pub fn weight_fraction(&self, layout: &ParamLayout) -> f64 {
        let selected: usize = layout
            .weights()
            .map(|e| self.bits[e.range()].iter().filter(|&&b| b).count())
            .sum();
        selected as f64 / layout.total_weights().max(1) as f64
    }

    pub(crate) fn zero_unselected<F: Scalar>(&self, values: &mut [F]) {
        for (v, &b) in values.iter_mut().zip(&self.bits) {
            if !b {
                *v = F::zero();
            }
        }
    }

    /// Offsets of the selected entries, ascending.
    pub fn selected_offsets(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    /// Text artifact: a column header line, one
    /// `variant,k_or_fraction,total,selected` line, then one selected offset
    /// per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(16 + self.selected * 6);
        s.push_str("variant,k_or_fraction,total,selected\n");
        s.push_str(&format!(
            "{},{},{},{}\n",
            self.variant,
            self.param,
            self.bits.len(),
            self.selected
        ));
        for o in self.selected_offsets() {
            s.push_str(&o.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::config("mask", m);
        let mut lines = text.lines();
        if lines.next() != Some("variant,k_or_fraction,total,selected") {
            return Err(bad("missing header line".into()));
        }
        let meta = lines
            .next()
            .ok_or_else(|| bad("missing summary line".into()))?;
        let fields: Vec<&str> = meta.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(format!("summary line has {} fields", fields.len())));
        }
        let variant: MaskVariant = fields[0].parse().map_err(bad)?;
        let param = match variant {
            MaskVariant::Dense => MaskParam::None,
            v if v.uses_k() => MaskParam::K(
                fields[1]
                    .parse()
                    .map_err(|_| bad(format!("bad k `{}`", fields[1])))?,
            ),
            _ => MaskParam::Fraction(
                fields[1]
                    .parse()
                    .map_err(|_| bad(format!("bad fraction `{}`", fields[1])))?,
            ),
        };
        let total: usize = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad total `{}`", fields[2])))?;
        let selected: usize = fields[3]
            .parse()
            .map_err(|_| bad(format!("bad selected `{}`", fields[3])))?;
        let mut bits = vec![false; total];
        let mut last = None;
        for line in lines.filter(|l| !l.is_empty()) {
            let o: usize = line
                .parse()
                .map_err(|_| bad(format!("bad offset `{line}`")))?;
            if o >= total || last.is_some_and(|p| o <= p) {
                return Err(bad(format!("offset {o} out of range or out of order")));
            }
            bits[o] = true;
            last = Some(o);
        }
        let mask = Self::from_bits(bits, variant, param);
        if mask.selected != selected {
            return Err(bad(format!(
                "header says {selected} selected, found {}",
                mask.selected
            )));
        }
        Ok(mask)
    }
}

/// Zeroes every unselected coordinate of `grad`.
pub fn apply_mask<F: Scalar>(mask: &Mask, grad: &ParamVector<F>) -> Result<ParamVector<F>> {
    if mask.len() != grad.len() {
        return Err(Error::Dimension {
            context: "mask length",
            expected: mask.len(),
            actual: grad.len(),
        });
    }
    let mut out = grad.clone();
    mask.zero_unselected(&mut out.0);
    Ok(out)
}

/// Starts from all-biases-on, all-weights-off.
fn biases_only(layout: &ParamLayout) -> Vec<bool> {
    let mut bits = vec![false; layout.total_shared];
    for e in layout.entries.iter().filter(|e| e.kind == ParamKind::Bias) {
        bits[e.range()].fill(true);
    }
    bits
}

fn check_k(k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::config("k", "must be at least 1"));
    }
    Ok(())
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("fraction", "must lie in (0, 1]"));
    }
    Ok(())
}

/// `⌈fraction · n⌉`, tolerant of representation error in `fraction · n`.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Per-row selection by magnitude: `largest` picks the top-k, otherwise the
/// bottom-k. Ties go to the lower column.
fn per_neuron<F: Scalar>(model: &MtlModel<F>, k: usize, largest: bool) -> Vec<bool> {
    let layout = model.layout();
    let mut bits = biases_only(layout);
    for (entry, layer) in layout.weights().zip(model.trunk()) {
        let take = k.min(entry.fan_in);
        let mut cols: Vec<usize> = Vec::with_capacity(entry.fan_in);
        for r in 0..entry.fan_out {
            let row = layer.weights.row(r);
            cols.clear();
            cols.extend(0..entry.fan_in);
            cols.sort_by(|&a, &b| {
                let ord = row[a]
                    .abs()
                    .partial_cmp(&row[b].abs())
                    .expect("finite weights");
                let ord = if largest { ord.reverse() } else { ord };
                ord.then(a.cmp(&b))
            });
            let base = entry.offset + r * entry.fan_in;
            for &c in &cols[..take] {
                bits[base + c] = true;
            }
        }
    }
    bits
}

/// Top-`k` input weights by magnitude for every trunk neuron. `k` is clamped
/// to each layer's fan-in.
pub fn build_psn_mask<F: Scalar>(model: &MtlModel<F>, k: usize) -> Result<Mask> {
    check_k(k)?;
    Ok(Mask::from_bits(
        per_neuron(model, k, true),
        MaskVariant::Psn,
        MaskParam::K(k),
    ))
}

/// Bottom-`k` input weights by magnitude for every trunk neuron.
pub fn build_reverse_mask<F: Scalar>(model: &MtlModel<F>, k: usize) -> Result<Mask> {
    check_k(k)?;
    Ok(Mask::from_bits(
        per_neuron(model, k, false),
        MaskVariant::Reverse,
        MaskParam::K(k),
    ))
}

/// `⌈fraction · n⌉` weights drawn uniformly without replacement from each
/// trunk layer's `n` weights.
pub fn build_random_mask<F: Scalar>(model: &MtlModel<F>, fraction: f64, seed: u64) -> Result<Mask> {
    check_fraction(fraction)?;
    let layout = model.layout();
    let mut bits = biases_only(layout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for entry in layout.weights() {
        let take = fraction_count(fraction, entry.len);
        for i in rand::seq::index::sample(&mut rng, entry.len, take) {
            bits[entry.offset + i] = true;
        }
    }
    Ok(Mask::from_bits(
        bits,
        MaskVariant::Random,
        MaskParam::Fraction(fraction),
    ))
}

/// Top `⌈fraction · total⌉` trunk weights by magnitude across all layers.
/// Ties go to the lower offset.
pub fn build_global_mask<F: Scalar>(model: &MtlModel<F>, fraction: f64) -> Result<Mask> {
    check_fraction(fraction)?;
    let layout = model.layout();
    let mut bits = biases_only(layout);
    let shared = model.shared_params();
    let mut candidates: Vec<usize> = layout.weights().flat_map(|e| e.range()).collect();
    let take = fraction_count(fraction, candidates.len());
    candidates.sort_by(|&a, &b| {
        shared.0[b]
            .abs()
            .partial_cmp(&shared.0[a].abs())
            .expect("finite weights")
            .then(a.cmp(&b))
    });
    for &o in &candidates[..take] {
        bits[o] = true;
    }
    Ok(Mask::from_bits(
        bits,
        MaskVariant::Global,
        MaskParam::Fraction(fraction),
    ))
}

/// Builds the mask for `variant`. `k` is used by per-neuron variants and
/// `fraction` by the others.
pub fn build_mask<F: Scalar>(
    model: &MtlModel<F>,
    variant: MaskVariant,
    k: usize,
    fraction: f64,
    seed: u64,
) -> Result<Mask> {
    match variant {
        MaskVariant::Dense => Ok(Mask::dense(model.layout().total_shared)),
        MaskVariant::Psn => build_psn_mask(model, k),
        MaskVariant::Reverse => build_reverse_mask(model, k),
        MaskVariant::Random => build_random_mask(model, fraction, seed),
        MaskVariant::Global => build_global_mask(model, fraction),
    }
}

/// Trunk weights a per-neuron selection with `k` keeps.
pub fn per_neuron_weight_count(layout: &ParamLayout, k: usize) -> usize {
    layout.weights().map(|e| e.fan_out * k.min(e.fan_in)).sum()
}

/// Selected entries (weights plus always-on biases) implied by the variant.
pub fn expected_selected(
    layout: &ParamLayout,
    variant: MaskVariant,
    k: usize,
    fraction: f64,
) -> usize {
    let biases: usize = layout
        .entries
        .iter()
        .filter(|e| e.kind == ParamKind::Bias)
        .map(|e| e.len)
        .sum();
    let weights = match variant {
        MaskVariant::Dense => layout.total_weights(),
        MaskVariant::Psn | MaskVariant::Reverse => per_neuron_weight_count(layout, k),
        MaskVariant::Random => layout
            .weights()
            .map(|e| fraction_count(fraction, e.len))
            .sum(),
        MaskVariant::Global => fraction_count(fraction, layout.total_weights()),
    };
    biases + weights
}

/// The per-neuron `k` whose kept weight share is closest to `fraction`
/// (smaller `k` on ties).
pub fn k_for_fraction(layout: &ParamLayout, fraction: f64) -> usize {
    let total = layout.total_weights().max(1) as f64;
    let max_k = layout.weights().map(|e| e.fan_in).max().unwrap_or(1);
    (1..=max_k)
        .min_by(|&a, &b| {
            let da = (per_neuron_weight_count(layout, a) as f64 / total - fraction).abs();
            let db = (per_neuron_weight_count(layout, b) as f64 / total - fraction).abs();
            da.partial_cmp(&db).expect("finite").then(a.cmp(&b))
        })
        .unwrap_or(1)
}
