//! Synthetic hormone-profile patients spread across simulated clinics.
//!
//! Each patient carries seven blood-panel metrics and the contraceptive
//! (OCP) that worked for them. Metric values are drawn uniformly from a
//! per-OCP subrange of the metric's diagnosis range; metrics with no
//! correlation for an OCP use the whole diagnosis range. A fraction of
//! labels is then resampled uniformly to cap attainable accuracy.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Dirichlet;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::{self, SimRng};
use crate::{NUM_CLASSES, NUM_FEATURES};

/// Oral contraceptive option. Discriminants are the stable label encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Ocp {
    Apri = 0,
    Cyclen = 1,
    TriCyclen = 2,
    Yaz = 3,
    Diane35 = 4,
}

impl Ocp {
    pub const ALL: [Ocp; NUM_CLASSES] = [
        Ocp::Apri,
        Ocp::Cyclen,
        Ocp::TriCyclen,
        Ocp::Yaz,
        Ocp::Diane35,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("OCP index {index} not in 0..5")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Ocp::Apri => "Apri",
            Ocp::Cyclen => "Cyclen",
            Ocp::TriCyclen => "Tri-cyclen",
            Ocp::Yaz => "Yaz",
            Ocp::Diane35 => "Diane-35",
        }
    }
}

impl fmt::Display for Ocp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Blood-panel metric, in feature-column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    LhFshRatio,
    Testosterone,
    Dheas,
    Prolactin,
    Androstenedione,
    Estradiol,
    Amh,
}

impl Metric {
    pub const ALL: [Metric; NUM_FEATURES] = [
        Metric::LhFshRatio,
        Metric::Testosterone,
        Metric::Dheas,
        Metric::Prolactin,
        Metric::Androstenedione,
        Metric::Estradiol,
        Metric::Amh,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column name used in dataset files.
    pub fn column(self) -> &'static str {
        match self {
            Metric::LhFshRatio => "lh_fsh",
            Metric::Testosterone => "testosterone",
            Metric::Dheas => "dheas",
            Metric::Prolactin => "prolactin",
            Metric::Androstenedione => "androstenedione",
            Metric::Estradiol => "estradiol",
            Metric::Amh => "amh",
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_range(&self, other: &Range) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn overlaps(&self, other: &Range) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    /// Distance from `x` to the interval; zero inside.
    pub fn distance(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }
}

/// Range a metric is sampled from for one OCP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub range: Range,
    /// `false` means no correlation: `range` is the full diagnosis range.
    pub correlated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HormoneSpecTable {
    diagnosis: [Range; NUM_FEATURES],
    /// `subranges[metric][ocp]`; `None` is no correlation.
    subranges: [[Option<Range>; NUM_CLASSES]; NUM_FEATURES],
}

const fn r(lo: f64, hi: f64) -> Option<Range> {
    Some(Range::new(lo, hi))
}

/// Builds the hormone/OCP correlation table used for generation.
pub fn builtin_hormone_table() -> HormoneSpecTable {
    HormoneSpecTable {
        diagnosis: [
            Range::new(2.0, 3.5),
            Range::new(86.0, 150.0),
            Range::new(200.0, 430.0),
            Range::new(25.0, 40.0),
            Range::new(0.4, 2.7),
            Range::new(60.0, 120.0),
            Range::new(5.0, 10.0),
        ],
        // columns: Apri, Cyclen, Tri-cyclen, Yaz, Diane-35
        subranges: [
            [r(2.0, 2.5), r(3.1, 3.5), None, r(2.6, 3.0), None],
            [
                r(121.0, 130.9),
                r(86.0, 100.9),
                r(101.0, 110.9),
                r(131.0, 150.0),
                r(111.0, 120.9),
            ],
            [
                r(200.0, 300.9),
                r(301.0, 350.9),
                r(351.0, 400.9),
                None,
                r(401.0, 430.0),
            ],
            [None, r(31.0, 35.9), None, r(36.0, 40.0), r(25.0, 30.9)],
            [
                r(1.1, 1.5),
                r(1.6, 2.0),
                r(0.4, 0.7),
                r(0.8, 1.0),
                r(2.1, 2.7),
            ],
            [None, r(81.0, 100.9), r(101.0, 120.0), r(60.0, 80.9), None],
            [r(8.1, 10.0), None, None, r(5.0, 6.5), r(6.6, 8.0)],
        ],
    }
}

impl HormoneSpecTable {
    pub fn diagnosis_range(&self, metric: Metric) -> Range {
        self.diagnosis[metric.index()]
    }

    pub fn lookup(&self, ocp: Ocp, metric: Metric) -> Correlation {
        match self.subranges[metric.index()][ocp.index()] {
            Some(range) => Correlation {
                range,
                correlated: true,
            },
            None => Correlation {
                range: self.diagnosis_range(metric),
                correlated: false,
            },
        }
    }

    /// Checks containment, pairwise disjointness and full testosterone coverage.
    pub fn validate(&self) -> Result<()> {
        for metric in Metric::ALL {
            let diag = self.diagnosis_range(metric);
            if !(diag.lo < diag.hi) {
                return Err(Error::InvalidParameter(format!(
                    "{} diagnosis range is empty",
                    metric.column()
                )));
            }
            let subs: Vec<(Ocp, Range)> = Ocp::ALL
                .iter()
                .filter_map(|&o| self.subranges[metric.index()][o.index()].map(|r| (o, r)))
                .collect();
            for (i, (oa, ra)) in subs.iter().enumerate() {
                if !diag.contains_range(ra) {
                    return Err(Error::InvalidParameter(format!(
                        "{} subrange for {oa} escapes the diagnosis range",
                        metric.column()
                    )));
                }
                for (ob, rb) in &subs[i + 1..] {
                    if ra.overlaps(rb) {
                        return Err(Error::InvalidParameter(format!(
                            "{} subranges of {oa} and {ob} overlap",
                            metric.column()
                        )));
                    }
                }
            }
            if metric == Metric::Testosterone && subs.len() != NUM_CLASSES {
                return Err(Error::InvalidParameter(
                    "testosterone must correlate with every OCP".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientProfile {
    /// Raw values in [`Metric::ALL`] order.
    pub hormones: [f64; NUM_FEATURES],
    /// Possibly noise-flipped label the model trains on.
    pub label: Ocp,
    /// Label before noise. Never shown to the model.
    pub generator_label: Ocp,
}

/// Draws a probability vector over the five OCPs from a symmetric Dirichlet.
pub fn sample_client_prior(rng: &mut SimRng, alpha: f64) -> Result<[f64; NUM_CLASSES]> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dirichlet alpha must be positive, got {alpha}"
        )));
    }
    let dist = Dirichlet::new([alpha; NUM_CLASSES])
        .map_err(|e| Error::InvalidParameter(format!("dirichlet: {e}")))?;
    Ok(dist.sample(rng))
}

pub fn sample_patient(rng: &mut SimRng, ocp: Ocp, table: &HormoneSpecTable) -> PatientProfile {
    let mut hormones = [0.0; NUM_FEATURES];
    for metric in Metric::ALL {
        let range = table.lookup(ocp, metric).range;
        hormones[metric.index()] = rng.random_range(range.lo..=range.hi);
    }
    PatientProfile {
        hormones,
        label: ocp,
        generator_label: ocp,
    }
}

/// With probability `p`, replaces the label by a uniform draw over all OCPs.
pub fn apply_label_noise(rng: &mut SimRng, mut patient: PatientProfile, p: f64) -> PatientProfile {
    if rng.random_bool(p) {
        patient.label = Ocp::ALL[rng.random_range(0..NUM_CLASSES)];
    }
    patient
}

/// Maps a raw value to `[-0.5, 0.5]` over the metric's diagnosis range.
pub fn normalize_value(table: &HormoneSpecTable, metric: Metric, x: f64) -> Result<f64> {
    let Range { lo, hi } = table.diagnosis_range(metric);
    if !(lo <= x && x <= hi) {
        return Err(Error::OutOfRange {
            metric: metric.column(),
            value: x,
            lo,
            hi,
        });
    }
    Ok(((x - lo) / (hi - lo) - 0.5).clamp(-0.5, 0.5))
}

pub fn normalize(
    profile: &PatientProfile,
    table: &HormoneSpecTable,
) -> Result<[f64; NUM_FEATURES]> {
    let mut out = [0.0; NUM_FEATURES];
    for metric in Metric::ALL {
        out[metric.index()] = normalize_value(table, metric, profile.hormones[metric.index()])?;
    }
    Ok(out)
}

/// Predicts the OCP from total testosterone alone, whose subranges tile
/// the diagnosis range. Values falling in a print gap go to the nearest
/// subrange; an exact tie goes to the lower one.
pub fn oracle_classify(profile: &PatientProfile, table: &HormoneSpecTable) -> Ocp {
    let t = profile.hormones[Metric::Testosterone.index()];
    let mut best = (f64::INFINITY, f64::INFINITY, Ocp::Apri);
    for ocp in Ocp::ALL {
        let range = table.lookup(ocp, Metric::Testosterone).range;
        let d = range.distance(t);
        if d < best.0 || (d == best.0 && range.lo < best.1) {
            best = (d, range.lo, ocp);
        }
    }
    best.2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataMode {
    Iid,
    NonIid,
}

impl DataMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DataMode::Iid => "iid",
            DataMode::NonIid => "noniid",
        }
    }
}

impl FromStr for DataMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "iid" => Ok(DataMode::Iid),
            "noniid" | "non-iid" => Ok(DataMode::NonIid),
            other => Err(Error::Parse(format!("unknown data mode `{other}`"))),
        }
    }
}

/// Training-set size per client.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeMode {
    Fixed(usize),
    /// Integer uniform on `[lo, hi]`.
    Variable {
        lo: usize,
        hi: usize,
    },
}

impl SizeMode {
    pub const STANDARD_FIXED: SizeMode = SizeMode::Fixed(12_500);
    pub const STANDARD_VARIABLE: SizeMode = SizeMode::Variable {
        lo: 200,
        hi: 20_000,
    };

    pub fn label(self) -> &'static str {
        match self {
            SizeMode::Fixed(_) => "fixed",
            SizeMode::Variable { .. } => "variable",
        }
    }
}

impl fmt::Display for SizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeMode::Fixed(n) => write!(f, "fixed:{n}"),
            SizeMode::Variable { lo, hi } => write!(f, "variable:{lo}:{hi}"),
        }
    }
}

impl FromStr for SizeMode {
    type Err = Error;

    /// Accepts `fixed:N`, `variable` and `variable:LO:HI`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad size mode `{s}`"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["fixed", n] => Ok(SizeMode::Fixed(n.parse().map_err(|_| bad())?)),
            ["fixed"] => Ok(SizeMode::STANDARD_FIXED),
            ["variable"] => Ok(SizeMode::STANDARD_VARIABLE),
            ["variable", lo, hi] => Ok(SizeMode::Variable {
                lo: lo.parse().map_err(|_| bad())?,
                hi: hi.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataGenConfig {
    pub mode: DataMode,
    pub num_clients: u32,
    pub size: SizeMode,
    pub noise_prob: f64,
    pub dirichlet_alpha: f64,
    pub seed: u64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            mode: DataMode::Iid,
            num_clients: 12,
            size: SizeMode::STANDARD_FIXED,
            noise_prob: 0.1,
            dirichlet_alpha: 1.0,
            seed: 0,
        }
    }
}

impl DataGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return Err(Error::InvalidParameter(format!(
                "noise probability {} not in [0, 1]",
                self.noise_prob
            )));
        }
        if self.num_clients < 1 {
            return Err(Error::InvalidParameter("need at least one client".into()));
        }
        if !(self.dirichlet_alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dirichlet alpha must be positive, got {}",
                self.dirichlet_alpha
            )));
        }
        match self.size {
            SizeMode::Fixed(0) => Err(Error::InvalidParameter("fixed size must be >= 1".into())),
            SizeMode::Variable { lo, hi } if lo == 0 || lo > hi => Err(Error::InvalidParameter(
                format!("variable size bounds [{lo}, {hi}] are invalid"),
            )),
            _ => Ok(()),
        }
    }

    /// Short tag such as `iid-fixed` used in metrics files.
    pub fn regime_label(&self) -> String {
        format!("{}-{}", self.mode.as_str(), self.size.label())
    }
}

/// Normalized, model-facing examples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub features: Vec<[f64; NUM_FEATURES]>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn from_profiles(profiles: &[PatientProfile], table: &HormoneSpecTable) -> Result<Self> {
        let features = profiles
            .iter()
            .map(|p| normalize(p, table))
            .collect::<Result<Vec<_>>>()?;
        let labels = profiles.iter().map(|p| p.label.index()).collect();
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One clinic's data.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub client_id: u32,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub raw_train: Vec<PatientProfile>,
    pub raw_val: Vec<PatientProfile>,
    pub raw_test: Vec<PatientProfile>,
}

impl ClientDataset {
    pub fn from_raw(
        client_id: u32,
        raw_train: Vec<PatientProfile>,
        raw_val: Vec<PatientProfile>,
        raw_test: Vec<PatientProfile>,
        table: &HormoneSpecTable,
    ) -> Result<Self> {
        Ok(Self {
            client_id,
            train: Split::from_profiles(&raw_train, table)?,
            val: Split::from_profiles(&raw_val, table)?,
            test: Split::from_profiles(&raw_test, table)?,
            raw_train,
            raw_val,
            raw_test,
        })
    }
}

/// Size of the validation and test splits for a training split of `n_train`.
pub fn holdout_size(n_train: usize) -> usize {
    n_train.div_ceil(4)
}

pub fn uniform_prior() -> [f64; NUM_CLASSES] {
    [1.0 / NUM_CLASSES as f64; NUM_CLASSES]
}

/// Generates one client's splits. `rng` should be that client's own stream.
pub fn generate_client_dataset(
    rng: &mut SimRng,
    config: &DataGenConfig,
    client_id: u32,
    prior: &[f64; NUM_CLASSES],
    table: &HormoneSpecTable,
) -> Result<ClientDataset> {
    config.validate()?;
    let total: f64 = prior.iter().sum();
    if prior.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "prior {prior:?} is not a probability vector"
        )));
    }
    let ocp_dist =
        WeightedIndex::new(prior).map_err(|e| Error::InvalidParameter(format!("prior: {e}")))?;

    let n_train = match config.size {
        SizeMode::Fixed(n) => n,
        SizeMode::Variable { lo, hi } => rng.random_range(lo..=hi),
    };
    let n_holdout = holdout_size(n_train);

    let mut draw = |n: usize| -> Vec<PatientProfile> {
        (0..n)
            .map(|_| {
                let ocp = Ocp::ALL[ocp_dist.sample(rng)];
                let patient = sample_patient(rng, ocp, table);
                apply_label_noise(rng, patient, config.noise_prob)
            })
            .collect()
    };
    let raw_train = draw(n_train);
    let raw_val = draw(n_holdout);
    let raw_test = draw(n_holdout);

    ClientDataset::from_raw(client_id, raw_train, raw_val, raw_test, table)
}

/// Generates every client's dataset. Client `i` uses stream `mix(seed, i)`,
/// so clients are built in parallel with order-independent results.
pub fn generate_federation(config: &DataGenConfig) -> Result<Vec<ClientDataset>> {
    config.validate()?;
    let table = builtin_hormone_table();
    (0..config.num_clients)
        .into_par_iter()
        .map(|client_id| {
            let mut rng = seed::client_data_rng(config.seed, client_id);
            let prior = match config.mode {
                DataMode::Iid => uniform_prior(),
                DataMode::NonIid => sample_client_prior(&mut rng, config.dirichlet_alpha)?,
            };
            generate_client_dataset(&mut rng, config, client_id, &prior, &table)
        })
        .collect()
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn dataset_header() -> Vec<&'static str> {
    let mut header = vec!["client_id", "split"];
    header.extend(Metric::ALL.iter().map(|m| m.column()));
    header.extend(["label", "generator_label"]);
    header
}

/// Writes raw profiles as CSV, one row per patient.
pub fn write_dataset_csv<W: Write>(writer: W, clients: &[ClientDataset]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(dataset_header())?;
    let mut record: Vec<String> = Vec::with_capacity(11);
    for client in clients {
        let splits = [&client.raw_train, &client.raw_val, &client.raw_test];
        for (name, profiles) in SPLITS.iter().zip(splits) {
            for p in profiles {
                record.clear();
                record.push(client.client_id.to_string());
                record.push((*name).to_string());
                record.extend(p.hormones.iter().map(|h| h.to_string()));
                record.push(p.label.index().to_string());
                record.push(p.generator_label.index().to_string());
                out.write_record(&record)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset CSV and normalizes it. Clients come back sorted by id.
pub fn read_dataset_csv<R: Read>(
    reader: R,
    table: &HormoneSpecTable,
) -> Result<Vec<ClientDataset>> {
    let mut input = csv::Reader::from_reader(reader);
    let header: Vec<String> = input.headers()?.iter().map(str::to_owned).collect();
    if header != dataset_header() {
        return Err(Error::Parse(format!(
            "unexpected dataset header {header:?}"
        )));
    }

    let mut by_client: std::collections::BTreeMap<u32, [Vec<PatientProfile>; 3]> =
        Default::default();
    for (line, row) in input.records().enumerate() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let parse_err = |what: &str| Error::Parse(format!("row {}: bad {what}", line + 2));
        let client_id: u32 = field(0).parse().map_err(|_| parse_err("client_id"))?;
        let split = SPLITS
            .iter()
            .position(|s| *s == field(1))
            .ok_or_else(|| parse_err("split"))?;
        let mut hormones = [0.0; NUM_FEATURES];
        for (i, h) in hormones.iter_mut().enumerate() {
            *h = field(2 + i)
                .parse()
                .map_err(|_| parse_err(Metric::ALL[i].column()))?;
        }
        let label_at = |i: usize, what: &str| -> Result<Ocp> {
            let idx: usize = field(i).parse().map_err(|_| parse_err(what))?;
            Ocp::from_index(idx)
        };
        let profile = PatientProfile {
            hormones,
            label: label_at(9, "label")?,
            generator_label: label_at(10, "generator_label")?,
        };
        by_client.entry(client_id).or_default()[split].push(profile);
    }

    by_client
        .into_iter()
        .map(|(id, [train, val, test])| ClientDataset::from_raw(id, train, val, test, table))
        .collect()
}
