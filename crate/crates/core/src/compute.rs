//! Analytic FLOPs accounting.
//!
//! One multiply-accumulate counts as one FLOP, and only matrix products are
//! counted. Costs are reported in GFLOPs per sample.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::kv::KvMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CostSymbol {
    G,
    D,
    V,
    U,
    Uv,
}

impl CostSymbol {
    pub const ALL: [CostSymbol; 5] = [CostSymbol::G, CostSymbol::D, CostSymbol::V, CostSymbol::U, CostSymbol::Uv];

    pub fn name(self) -> &'static str {
        match self {
            CostSymbol::G => "F_G",
            CostSymbol::D => "F_D",
            CostSymbol::V => "F_v",
            CostSymbol::U => "F_u",
            CostSymbol::Uv => "F_uv",
        }
    }
}

impl std::fmt::Display for CostSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CostSymbol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CostSymbol::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config(format!("unknown cost symbol `{s}`")))
    }
}

/// Weighted sum of forward passes, e.g. `4*F_G + 10.5*F_D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe(pub Vec<(CostSymbol, f64)>);

impl Recipe {
    pub fn parse(text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for raw in text.split('+') {
            let term = raw.trim();
            if term.is_empty() {
                return Err(Error::config(format!("empty term in recipe `{text}`")));
            }
            let split = term.find("F_").ok_or_else(|| Error::config(format!("term `{term}` names no cost symbol")))?;
            let (coef, sym) = term.split_at(split);
            let coef = coef.trim().trim_end_matches('*').trim();
            let mult = if coef.is_empty() {
                1.0
            } else {
                coef.parse::<f64>()
                    .map_err(|_| Error::config(format!("bad multiplier `{coef}` in recipe `{text}`")))?
            };
            if !(mult > 0.0 && mult.is_finite()) {
                return Err(Error::config(format!("multiplier of `{term}` must be positive")));
            }
            terms.push((sym.trim().parse()?, mult));
        }
        Ok(Recipe(terms))
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Recipe(self.0.iter().map(|&(s, m)| (s, m * alpha)).collect())
    }

    pub fn evaluate(&self, costs: &BTreeMap<CostSymbol, f64>) -> Result<f64> {
        self.0
            .iter()
            .map(|(sym, m)| {
                costs
                    .get(sym)
                    .map(|c| m * c)
                    .ok_or_else(|| Error::config(format!("recipe uses {sym} but no forward cost is given")))
            })
            .sum()
    }
}

impl std::fmt::Display for Recipe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (sym, m)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            if *m == 1.0 {
                write!(f, "{sym}")?;
            } else {
                write!(f, "{m}{sym}")?;
            }
        }
        Ok(())
    }
}

/// Forward costs of one method and its per-iteration call model.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeModel {
    pub name: String,
    pub forward_costs: BTreeMap<CostSymbol, f64>,
    pub recipe: Recipe,
    /// Forward passes per generated sample at inference.
    pub inference: Recipe,
    pub epochs: Option<u64>,
    pub baseline: bool,
}

impl ComputeModel {
    pub fn new(name: impl Into<String>, costs: &[(CostSymbol, f64)], recipe: &str) -> Result<Self> {
        let recipe = Recipe::parse(recipe)?;
        let inference = Recipe(vec![(recipe.0.first().map(|t| t.0).unwrap_or(CostSymbol::G), 1.0)]);
        let model = Self {
            name: name.into(),
            forward_costs: costs.iter().copied().collect(),
            recipe,
            inference,
            epochs: None,
            baseline: false,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_epochs(mut self, epochs: u64) -> Self {
        self.epochs = Some(epochs);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for r in [&self.recipe, &self.inference] {
            r.evaluate(&self.forward_costs)?;
        }
        if let Some((s, c)) = self.forward_costs.iter().find(|(_, c)| !(**c >= 0.0 && c.is_finite())) {
            return Err(Error::config(format!("{s} cost {c} must be a nonnegative number")));
        }
        Ok(())
    }

    /// Loads a flat key-value ledger entry:
    ///
    /// ```text
    /// name = CAT-H/2
    /// recipe = 4*F_G + 10.5*F_D
    /// inference = F_G
    /// epochs = 60
    /// cost.F_G = 167
    /// cost.F_D = preset:D-B/2
    /// ```
    ///
    /// A cost may be a number, `preset:<name>`, or `model:<file>` pointing at
    /// a model config relative to the ledger file.
    pub fn from_kv(kv: &KvMap, base_dir: Option<&Path>) -> Result<Self> {
        kv.ensure_known(&["name", "recipe", "inference", "epochs", "baseline", "cost."], "compute ledger")?;
        let name: String = kv.require("name")?;
        let mut forward_costs = BTreeMap::new();
        for (key, value) in kv.section("cost").iter() {
            let sym: CostSymbol = key.parse()?;
            forward_costs.insert(sym, resolve_cost(value, base_dir)?);
        }
        let recipe = Recipe::parse(&kv.require::<String>("recipe")?)?;
        let inference = match kv.raw("inference") {
            Some(text) => Recipe::parse(text)?,
            None => Recipe(vec![(recipe.0[0].0, 1.0)]),
        };
        let epochs = kv.get::<u64>("epochs")?;
        let baseline = kv.get_or("baseline", false)?;
        let model = Self {
            name,
            forward_costs,
            recipe,
            inference,
            epochs,
            baseline,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_kv(&KvMap::load(path)?, path.parent())
    }
}

fn resolve_cost(value: &str, base_dir: Option<&Path>) -> Result<f64> {
    let value = value.trim();
    if let Some(name) = value.strip_prefix("preset:") {
        return forward_flops(&ModelConfig::preset(name.trim())?);
    }
    if let Some(file) = value.strip_prefix("model:") {
        let mut path = PathBuf::from(file.trim());
        if path.is_relative() {
            if let Some(dir) = base_dir {
                path = dir.join(path);
            }
        }
        let kv = KvMap::load(&path)?;
        let cfg = ModelConfig::from_kv(&kv, &ModelConfig::desk_generator())?;
        return forward_flops(&cfg);
    }
    value
        .parse::<f64>()
        .map_err(|_| Error::config(format!("cost `{value}` is neither a number, preset:, nor model:")))
}

/// Per-sample forward FLOPs split by term (absolute FLOPs, not GFLOPs).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FlopsBreakdown {
    pub tokens: usize,
    pub embed: f64,
    pub mapping: f64,
    pub modulation: f64,
    pub attn_proj: f64,
    pub attn_mix: f64,
    pub ffn: f64,
    pub heads: f64,
}

impl FlopsBreakdown {
    pub fn per_layer(&self) -> f64 {
        self.attn_proj + self.attn_mix + self.ffn
    }

    pub fn total(&self) -> f64 {
        self.embed + self.mapping + self.modulation + self.attn_proj + self.attn_mix + self.ffn + self.heads
    }

    pub fn gflops(&self) -> f64 {
        self.total() / 1e9
    }
}

pub fn forward_flops_breakdown(cfg: &ModelConfig) -> Result<FlopsBreakdown> {
    cfg.validate()?;
    let c = cfg.hidden_dim as f64;
    let a = cfg.attn_dim() as f64;
    let h = cfg.ffn_hidden() as f64;
    let l = cfg.depth as f64;
    let mut out = FlopsBreakdown::default();
    match cfg.kind {
        ModelKind::Generator => {
            let n = (cfg.grid * cfg.grid) as f64;
            let (z, s) = (cfg.latent_dim as f64, cfg.style_dim as f64);
            let patch_out = (cfg.patch_size * cfg.patch_size * cfg.channels_in) as f64;
            out.tokens = cfg.grid * cfg.grid;
            out.mapping = (z + s) * s + s * s;
            out.modulation = l * s * 6.0 * c;
            out.heads = l * n * c * patch_out;
        }
        ModelKind::Discriminator => {
            let mut spatial = 0usize;
            for k in 0..cfg.num_scales() {
                let p = cfg.patch_of(k);
                let side = cfg.resolution_of(k) / p;
                spatial += side * side;
                out.embed += (side * side * p * p * cfg.channels_in) as f64 * c;
            }
            out.tokens = spatial + cfg.num_scales();
            // shared logit head plus the class projection at every cls token
            out.heads = cfg.num_scales() as f64 * 2.0 * c;
        }
    }
    let n = out.tokens as f64;
    out.attn_proj = l * n * 4.0 * c * a;
    out.attn_mix = l * n * 2.0 * n * a;
    out.ffn = l * n * 3.0 * c * h;
    Ok(out)
}

/// Forward GFLOPs per sample.
pub fn forward_flops(cfg: &ModelConfig) -> Result<f64> {
    Ok(forward_flops_breakdown(cfg)?.gflops())
}

/// GFLOPs per sample per training iteration.
pub fn training_step_flops(model: &ComputeModel) -> Result<f64> {
    model.recipe.evaluate(&model.forward_costs)
}

pub fn inference_flops(model: &ComputeModel) -> Result<f64> {
    model.inference.evaluate(&model.forward_costs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingBudget {
    pub epochs: u64,
    pub per_sample_iter_gflops: f64,
    /// Total in units of 10^3 GFLOPs.
    pub total_kgflops: f64,
}

impl TrainingBudget {
    pub fn relative_to(&self, baseline: &TrainingBudget) -> f64 {
        self.total_kgflops / baseline.total_kgflops
    }
}

pub fn total_training_flops(step_gflops: f64, epochs: u64) -> Result<TrainingBudget> {
    if !(step_gflops > 0.0 && step_gflops.is_finite()) || epochs == 0 {
        return Err(Error::argument("step cost and epochs must be positive"));
    }
    Ok(TrainingBudget {
        epochs,
        per_sample_iter_gflops: step_gflops,
        total_kgflops: step_gflops * epochs as f64 / 1000.0,
    })
}

/// One evaluated ledger row.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub name: String,
    pub forward: String,
    pub recipe: String,
    pub train_gflops: f64,
    pub infer_gflops: f64,
    pub budget: Option<TrainingBudget>,
    pub relative: Option<f64>,
}

/// Evaluates every model; relative totals are taken against the model marked
/// `baseline`, or the last one with epochs if none is marked.
pub fn ledger_rows(models: &[ComputeModel]) -> Result<Vec<LedgerRow>> {
    let budgets = models
        .iter()
        .map(|m| m.epochs.map(|e| total_training_flops(training_step_flops(m)?, e)).transpose())
        .collect::<Result<Vec<_>>>()?;
    let base = models
        .iter()
        .position(|m| m.baseline)
        .or_else(|| budgets.iter().rposition(Option::is_some))
        .and_then(|i| budgets[i]);
    models
        .iter()
        .zip(&budgets)
        .map(|(m, b)| {
            let forward = m
                .forward_costs
                .iter()
                .map(|(s, c)| format!("{s}={}", trim_float(*c)))
                .collect::<Vec<_>>()
                .join(", ");
            Ok(LedgerRow {
                name: m.name.clone(),
                forward,
                recipe: m.recipe.to_string(),
                train_gflops: training_step_flops(m)?,
                infer_gflops: inference_flops(m)?,
                budget: *b,
                relative: match (b, base) {
                    (Some(b), Some(base)) => Some(b.relative_to(&base)),
                    _ => None,
                },
            })
        })
        .collect()
}

fn trim_float(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerTable {
    /// Train/inference cost, epochs, totals and relative totals.
    Totals,
    /// Forward costs, call model, train and inference cost.
    CallModels,
}

impl std::str::FromStr for LedgerTable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" | "totals" => Ok(LedgerTable::Totals),
            "6" | "call-models" => Ok(LedgerTable::CallModels),
            other => Err(Error::argument(format!("unknown table `{other}` (expected 4 or 6)"))),
        }
    }
}

fn table_cells(rows: &[LedgerRow], table: LedgerTable) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    match table {
        LedgerTable::Totals => (
            vec!["method", "train_gflops", "infer_gflops", "epochs", "total_kgflops", "relative"],
            rows.iter()
                .map(|r| {
                    vec![
                        r.name.clone(),
                        format!("{:.1}", r.train_gflops),
                        format!("{:.1}", r.infer_gflops),
                        opt(r.budget.map(|b| b.epochs.to_string())),
                        opt(r.budget.map(|b| format!("{:.1}", b.total_kgflops))),
                        opt(r.relative.map(|x| format!("{x:.1}x"))),
                    ]
                })
                .collect(),
        ),
        LedgerTable::CallModels => (
            vec!["method", "forward_gflops", "training_step", "train_gflops", "infer_gflops"],
            rows.iter()
                .map(|r| {
                    vec![
                        r.name.clone(),
                        r.forward.clone(),
                        r.recipe.clone(),
                        format!("{:.1}", r.train_gflops),
                        format!("{:.1}", r.infer_gflops),
                    ]
                })
                .collect(),
        ),
    }
}

/// Aligned plain-text table.
pub fn render_text(rows: &[LedgerRow], table: LedgerTable) -> String {
    let (header, cells) = table_cells(rows, table);
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: Vec<String>| {
        let padded: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&mut out, header.iter().map(|h| h.to_string()).collect());
    line(&mut out, widths.iter().map(|w| "-".repeat(*w)).collect());
    for row in cells {
        line(&mut out, row);
    }
    out
}

pub fn render_csv(rows: &[LedgerRow], table: LedgerTable) -> Result<String> {
    let (header, cells) = table_cells(rows, table);
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Format {
        path: PathBuf::from("<memory>"),
        msg: e.to_string(),
    };
    w.write_record(&header).map_err(to_err)?;
    for row in cells {
        w.write_record(&row).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format {
        path: PathBuf::from("<memory>"),
        msg: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Loads one ledger file, or every `*.kv` file of a directory sorted by name.
pub fn load_ledger(path: impl AsRef<Path>) -> Result<Vec<ComputeModel>> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "kv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::config(format!("no .kv ledger files in {}", path.display())));
        }
        files.iter().map(ComputeModel::load).collect()
    } else {
        Ok(vec![ComputeModel::load(path)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_parsing() {
        let r = Recipe::parse("4*F_G + 10.5*F_D").unwrap();
        assert_eq!(r.0, vec![(CostSymbol::G, 4.0), (CostSymbol::D, 10.5)]);
        assert_eq!(Recipe::parse("3F_v + F_u + 3 F_uv").unwrap().0.len(), 3);
        assert_eq!(r.to_string(), "4F_G + 10.5F_D");
        assert!(Recipe::parse("4*F_X").is_err());
        assert!(Recipe::parse("0*F_G").is_err());
        assert!(Recipe::parse("4*F_G +").is_err());
    }

    #[test]
    fn missing_symbol_is_a_config_error() {
        let err = ComputeModel::new("x", &[(CostSymbol::G, 1.0)], "F_G + F_D").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn depth_linearity() {
        let a = ModelConfig::latent_g_b2();
        let b = ModelConfig {
            depth: 24,
            output_layers: vec![6, 12, 18, 24],
            ..a.clone()
        };
        let (fa, fb) = (forward_flops_breakdown(&a).unwrap(), forward_flops_breakdown(&b).unwrap());
        assert_eq!(fb.per_layer(), 2.0 * fa.per_layer());
        assert_eq!(fa.mapping, fb.mapping);
    }

    #[test]
    fn discriminator_token_count() {
        assert_eq!(forward_flops_breakdown(&ModelConfig::latent_d_b2()).unwrap().tokens, 344);
        assert_eq!(forward_flops_breakdown(&ModelConfig::desk_discriminator()).unwrap().tokens, 89);
    }

    #[test]
    fn tables_render() {
        let m = ComputeModel::new("A", &[(CostSymbol::G, 2.0), (CostSymbol::D, 1.0)], "4*F_G + 2*F_D")
            .unwrap()
            .with_epochs(10);
        let rows = ledger_rows(&[m]).unwrap();
        assert_eq!(rows[0].train_gflops, 10.0);
        assert_eq!(rows[0].relative, Some(1.0));
        let text = render_text(&rows, LedgerTable::Totals);
        assert!(text.lines().nth(2).unwrap().starts_with("A "));
        let csv = render_csv(&rows, LedgerTable::CallModels).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "A,\"F_G=2, F_D=1\",4F_G + 2F_D,10.0,2.0");
    }
}
