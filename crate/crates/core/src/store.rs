//! Line-delimited JSON persistence for fitted EMOS coefficients and
//! trained networks.
//!
//! The first line is a header naming the model kind; each further line is
//! one record. Floats are written with 17 significant digits so a reload is
//! bit-exact. Field order follows the struct definitions below.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dists::Family;
use crate::emos::{EmosCoefficients, ScopeKind, WindowFit};
use crate::error::{Error, Result};
use crate::mlp::{LeadTimeGroup, MlpModel, MlpWindowModel, Standardization, HIDDEN_DIM, INPUT_DIM, OUTPUT_DIM};

pub const STORE_FORMAT: &str = "windcal-model-store";
pub const STORE_VERSION: u32 = 1;

/// The four calibration models the pipeline can train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "tn-emos")]
    TnEmos,
    #[serde(rename = "ln-emos")]
    LnEmos,
    #[serde(rename = "tgev-emos")]
    TgevEmos,
    #[serde(rename = "tn-mlp")]
    TnMlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::TnEmos, ModelKind::LnEmos, ModelKind::TgevEmos, ModelKind::TnMlp];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::TnEmos => "tn-emos",
            ModelKind::LnEmos => "ln-emos",
            ModelKind::TgevEmos => "tgev-emos",
            ModelKind::TnMlp => "tn-mlp",
        }
    }

    /// Family of the predictive distribution the model emits.
    pub fn family(self) -> Family {
        match self {
            ModelKind::TnEmos | ModelKind::TnMlp => Family::TruncNormal,
            ModelKind::LnEmos => Family::LogNormal,
            ModelKind::TgevEmos => Family::Tgev,
        }
    }

    pub fn emos_family(self) -> Option<Family> {
        (self != ModelKind::TnMlp).then(|| self.family())
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model `{s}` (tn-emos|ln-emos|tgev-emos|tn-mlp)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub format: String,
    pub version: u32,
    pub model: ModelKind,
    /// `None` for networks, which are always regional.
    pub scope: Option<ScopeKind>,
    pub window_days: u32,
}

/// Coefficients of one (scope unit, date, lead time) window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmosRecord {
    pub family: Family,
    pub scope: ScopeKind,
    pub unit: String,
    pub date: NaiveDate,
    pub lead_time_index: u16,
    pub coefficients: Vec<f64>,
    pub train_crps: f64,
    pub n_train: usize,
}

impl EmosRecord {
    pub fn from_fit(scope: ScopeKind, fit: &WindowFit) -> Self {
        Self {
            family: fit.coefficients.family(),
            scope,
            unit: fit.unit.clone(),
            date: fit.date,
            lead_time_index: fit.lead_time_index,
            coefficients: fit.coefficients.to_vec(),
            train_crps: fit.train_crps,
            n_train: fit.n_train,
        }
    }

    pub fn coefficients(&self) -> Result<EmosCoefficients> {
        EmosCoefficients::from_slice(self.family, &self.coefficients)
    }
}

/// One trained network with everything needed to run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub date: NaiveDate,
    pub group: LeadTimeGroup,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub feature_mean: [f64; INPUT_DIM],
    pub feature_sd: [f64; INPUT_DIM],
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub train_crps: f64,
    pub n_train: usize,
}

impl MlpRecord {
    pub fn from_window(w: &MlpWindowModel) -> Self {
        let m = &w.model;
        Self {
            date: w.date,
            group: w.group,
            input_dim: INPUT_DIM,
            hidden_dim: HIDDEN_DIM,
            output_dim: OUTPUT_DIM,
            feature_mean: m.standardization.mean,
            feature_sd: m.standardization.sd,
            w1: m.w1.clone(),
            b1: m.b1.clone(),
            w2: m.w2.clone(),
            b2: m.b2.clone(),
            train_crps: w.train_crps,
            n_train: w.n_train,
        }
    }

    pub fn model(&self) -> Result<MlpModel> {
        if (self.input_dim, self.hidden_dim, self.output_dim) != (INPUT_DIM, HIDDEN_DIM, OUTPUT_DIM) {
            return Err(Error::Schema(format!(
                "network dimensions {}x{}x{} differ from {INPUT_DIM}x{HIDDEN_DIM}x{OUTPUT_DIM}",
                self.input_dim, self.hidden_dim, self.output_dim
            )));
        }
        let model = MlpModel {
            group: self.group,
            standardization: Standardization {
                mean: self.feature_mean,
                sd: self.feature_sd,
            },
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoreRecords {
    Emos(Vec<EmosRecord>),
    Mlp(Vec<MlpRecord>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelStore {
    pub header: StoreHeader,
    pub records: StoreRecords,
}

impl ModelStore {
    pub fn emos(family: Family, scope: ScopeKind, window_days: u32, records: Vec<EmosRecord>) -> Self {
        let model = match family {
            Family::TruncNormal => ModelKind::TnEmos,
            Family::LogNormal => ModelKind::LnEmos,
            Family::Tgev => ModelKind::TgevEmos,
        };
        Self {
            header: header(model, Some(scope), window_days),
            records: StoreRecords::Emos(records),
        }
    }

    pub fn mlp(window_days: u32, records: Vec<MlpRecord>) -> Self {
        Self {
            header: header(ModelKind::TnMlp, None, window_days),
            records: StoreRecords::Mlp(records),
        }
    }

    pub fn model(&self) -> ModelKind {
        self.header.model
    }

    pub fn len(&self) -> usize {
        match &self.records {
            StoreRecords::Emos(r) => r.len(),
            StoreRecords::Mlp(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        write_line(&mut w, &self.header)?;
        match &self.records {
            StoreRecords::Emos(rs) => rs.iter().try_for_each(|r| write_line(&mut w, r)),
            StoreRecords::Mlp(rs) => rs.iter().try_for_each(|r| write_line(&mut w, r)),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate();
        let header: StoreHeader = loop {
            match lines.next() {
                None => return Err(Error::Schema("model store is empty".into())),
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::Parse {
                        line: i as u64 + 1,
                        message: e.to_string(),
                    })?;
                    if !line.trim().is_empty() {
                        break parse_line(i, &line)?;
                    }
                }
            }
        };
        if header.format != STORE_FORMAT || header.version != STORE_VERSION {
            return Err(Error::Schema(format!(
                "unsupported store format `{}` version {}",
                header.format, header.version
            )));
        }
        let mut emos = Vec::new();
        let mut mlp = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::Parse {
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            if header.model == ModelKind::TnMlp {
                let r: MlpRecord = parse_line(i, &line)?;
                r.model().map_err(|e| Error::Parse {
                    line: i as u64 + 1,
                    message: e.to_string(),
                })?;
                mlp.push(r);
            } else {
                let r: EmosRecord = parse_line(i, &line)?;
                if Some(r.family) != header.model.emos_family() {
                    return Err(Error::Schema(format!(
                        "line {}: {} record in a {} store",
                        i + 1,
                        r.family,
                        header.model
                    )));
                }
                r.coefficients().map_err(|e| Error::Parse {
                    line: i as u64 + 1,
                    message: e.to_string(),
                })?;
                emos.push(r);
            }
        }
        let records = if header.model == ModelKind::TnMlp {
            StoreRecords::Mlp(mlp)
        } else {
            StoreRecords::Emos(emos)
        };
        Ok(Self { header, records })
    }

    /// EMOS coefficients keyed by (unit, date, lead time).
    pub fn emos_index(&self) -> Result<HashMap<(String, NaiveDate, u16), EmosCoefficients>> {
        let StoreRecords::Emos(rs) = &self.records else {
            return Err(Error::invalid("not an EMOS store"));
        };
        rs.iter()
            .map(|r| Ok(((r.unit.clone(), r.date, r.lead_time_index), r.coefficients()?)))
            .collect()
    }

    /// Networks keyed by (date, lead-time group).
    pub fn mlp_index(&self) -> Result<HashMap<(NaiveDate, LeadTimeGroup), MlpModel>> {
        let StoreRecords::Mlp(rs) = &self.records else {
            return Err(Error::invalid("not a network store"));
        };
        rs.iter().map(|r| Ok(((r.date, r.group), r.model()?))).collect()
    }
}

fn header(model: ModelKind, scope: Option<ScopeKind>, window_days: u32) -> StoreHeader {
    StoreHeader {
        format: STORE_FORMAT.into(),
        version: STORE_VERSION,
        model,
        scope,
        window_days,
    }
}

fn parse_line<T: for<'de> Deserialize<'de>>(index: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: index as u64 + 1,
        message: e.to_string(),
    })
}

/// Writes floats as `d.dddddddddddddddde±x`.
struct SignificantDigits;

impl serde_json::ser::Formatter for SignificantDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }
}

/// Serialize `value` as one JSON line with 17-significant-digit floats.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SignificantDigits);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

fn write_line<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    let line = to_json_line(value)?;
    writeln!(w, "{line}").map_err(|e| Error::io("<store>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 7, d).unwrap()
    }

    #[test]
    fn emos_store_round_trips_bit_exactly() {
        let records = vec![EmosRecord {
            family: Family::Tgev,
            scope: ScopeKind::Local,
            unit: "S01".into(),
            date: day(3),
            lead_time_index: 17,
            coefficients: vec![0.1, 1.0 / 3.0, -2.5e-300, 1e300, std::f64::consts::PI, -0.0],
            train_crps: 0.7234567890123456,
            n_train: 51,
        }];
        let store = ModelStore::emos(Family::Tgev, ScopeKind::Local, 51, records);
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"format\":\"windcal-model-store\""));
        assert!(text.contains("3.3333333333333331e-1"));
        let back = ModelStore::read_from(&buf[..]).unwrap();
        assert_eq!(back, store);
        let StoreRecords::Emos(rs) = &back.records else { panic!() };
        assert_eq!(rs[0].coefficients[5].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn mlp_store_round_trip_reproduces_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = MlpModel::glorot(LeadTimeGroup::Day2, [1.7, 0.1], &mut rng);
        let window = MlpWindowModel {
            date: day(9),
            group: LeadTimeGroup::Day2,
            model: model.clone(),
            initial_crps: 1.0,
            train_crps: 0.9,
            n_train: 100,
            max_train_date: day(8),
        };
        let store = ModelStore::mlp(51, vec![MlpRecord::from_window(&window)]);
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let back = ModelStore::read_from(&buf[..]).unwrap();
        let loaded = &back.mlp_index().unwrap()[&(day(9), LeadTimeGroup::Day2)];
        assert_eq!(loaded, &model);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ModelStore::read_from(&b""[..]), Err(Error::Schema(_))));
        assert!(matches!(ModelStore::read_from(&b"{not json"[..]), Err(Error::Parse { line: 1, .. })));
        let store = ModelStore::emos(Family::TruncNormal, ScopeKind::Regional, 20, Vec::new());
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        buf.extend_from_slice(b"{\"family\":\"tn\"}\n");
        assert!(matches!(ModelStore::read_from(&buf[..]), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn model_kind_parses() {
        for m in ModelKind::ALL {
            assert_eq!(m.as_str().parse::<ModelKind>().unwrap(), m);
        }
        assert!("mlp".parse::<ModelKind>().is_err());
    }
}
