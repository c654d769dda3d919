//! Bias of estimated risks and effects against ground truth, and the
//! table and figure files summarising it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::{EffectCurve, RiskCurve};

/// Per-month bias with its time averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasCurve {
    pub bias: Vec<f64>,
    /// `(1/K) sum |bias_k|`.
    pub mean_abs: f64,
    /// `(1/K) sum bias_k`.
    pub mean: f64,
}

impl BiasCurve {
    fn from_bias(bias: Vec<f64>) -> Self {
        let n = bias.len().max(1) as f64;
        let mean_abs = bias.iter().map(|b| b.abs()).sum::<f64>() / n;
        let mean = bias.iter().sum::<f64>() / n;
        Self { bias, mean_abs, mean }
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: lengths {a} and {b} differ")))
    }
}

/// `estimated_k - truth_k` for every month.
pub fn risk_bias(estimated: &RiskCurve, truth: &RiskCurve) -> Result<BiasCurve> {
    same_len(estimated.len(), truth.len(), "risk_bias")?;
    Ok(BiasCurve::from_bias(
        estimated.values.iter().zip(&truth.values).map(|(e, t)| e - t).collect(),
    ))
}

/// Risk difference and risk ratio of always versus never treating. The
/// ratio is undefined (`None`) where the never-treat risk is zero.
pub fn effects(always: &RiskCurve, never: &RiskCurve) -> Result<EffectCurve> {
    same_len(always.len(), never.len(), "effects")?;
    let rd = always.values.iter().zip(&never.values).map(|(a, n)| a - n).collect();
    let rr = always
        .values
        .iter()
        .zip(&never.values)
        .map(|(a, n)| if *n > 0.0 { Some(a / n) } else { None })
        .collect();
    Ok(EffectCurve { rr, rd })
}

/// Risk-ratio bias restricted to the months where it is defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioBias {
    pub bias: Vec<Option<f64>>,
    /// Mean absolute bias over the defined months.
    pub mean_abs: f64,
    pub mean: f64,
    pub defined: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectBias {
    pub rd: BiasCurve,
    pub rr: RatioBias,
}

fn ratio_bias(estimated: &EffectCurve, truth: &EffectCurve, mask: Option<&[bool]>) -> RatioBias {
    let bias: Vec<Option<f64>> = estimated
        .rr
        .iter()
        .zip(&truth.rr)
        .enumerate()
        .map(|(k, (e, t))| match (e, t) {
            (Some(e), Some(t)) if mask.is_none_or(|m| m[k]) => Some(e - t),
            _ => None,
        })
        .collect();
    let defined: Vec<f64> = bias.iter().flatten().copied().collect();
    let n = defined.len();
    let (mean_abs, mean) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            defined.iter().map(|b| b.abs()).sum::<f64>() / n as f64,
            defined.iter().sum::<f64>() / n as f64,
        )
    };
    RatioBias { mean_abs, mean, defined: n, excluded: bias.len() - n, bias }
}

/// Bias of the risk difference over all months and of the risk ratio over
/// the months where both ratios are defined.
pub fn effect_bias(estimated: &EffectCurve, truth: &EffectCurve) -> Result<EffectBias> {
    same_len(estimated.rd.len(), truth.rd.len(), "effect_bias")?;
    same_len(estimated.rr.len(), truth.rr.len(), "effect_bias")?;
    Ok(EffectBias {
        rd: BiasCurve::from_bias(
            estimated.rd.iter().zip(&truth.rd).map(|(e, t)| e - t).collect(),
        ),
        rr: ratio_bias(estimated, truth, None),
    })
}

/// Risk curves under the three strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRisks {
    pub natural: RiskCurve,
    pub always: RiskCurve,
    pub never: RiskCurve,
}

impl StrategyRisks {
    pub fn effects(&self) -> Result<EffectCurve> {
        effects(&self.always, &self.never)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub scenario: String,
    pub n: usize,
    /// Row label in tables and column name in figure files.
    pub method: String,
    pub simulation_seed: u64,
    pub training_seed: u64,
    pub monte_carlo_seed: u64,
}

/// Everything known about one method's estimates on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub meta: ReportMeta,
    pub natural: BiasCurve,
    pub always: BiasCurve,
    pub never: BiasCurve,
    pub effect: EffectBias,
    pub estimated: StrategyRisks,
    pub truth: StrategyRisks,
}

impl BiasReport {
    pub fn new(meta: ReportMeta, estimated: StrategyRisks, truth: StrategyRisks) -> Result<Self> {
        Ok(Self {
            natural: risk_bias(&estimated.natural, &truth.natural)?,
            always: risk_bias(&estimated.always, &truth.always)?,
            never: risk_bias(&estimated.never, &truth.never)?,
            effect: effect_bias(&estimated.effects()?, &truth.effects()?)?,
            meta,
            estimated,
            truth,
        })
    }
}

/// File names of the four standard tables, written even when empty.
pub const STANDARD_TABLES: [(&str, usize); 4] =
    [("simple", 1000), ("simple", 10000), ("complex", 1000), ("complex", 10000)];

const QUANTITIES: [&str; 5] = ["natural", "always", "never", "rd", "rr"];

fn group(reports: &[BiasReport]) -> BTreeMap<(String, usize), Vec<&BiasReport>> {
    let mut groups: BTreeMap<(String, usize), Vec<&BiasReport>> = BTreeMap::new();
    for (s, n) in STANDARD_TABLES {
        groups.insert((s.to_string(), n), Vec::new());
    }
    for r in reports {
        groups.entry((r.meta.scenario.clone(), r.meta.n)).or_default().push(r);
    }
    groups
}

/// Months where every report's estimated ratio and the true ratio are
/// defined, so all rows of a table average over the same set.
fn common_rr_mask(rows: &[&BiasReport]) -> Result<Option<Vec<bool>>> {
    let Some(first) = rows.first() else { return Ok(None) };
    let truth = first.truth.effects()?;
    let mut mask: Vec<bool> = truth.rr.iter().map(Option::is_some).collect();
    for r in rows {
        for (m, v) in mask.iter_mut().zip(r.estimated.effects()?.rr) {
            *m &= v.is_some();
        }
    }
    Ok(Some(mask))
}

struct Row<'a> {
    method: &'a str,
    values: [f64; 5],
}

fn table_rows<'a>(rows: &[&'a BiasReport]) -> Result<(Vec<Row<'a>>, usize, usize)> {
    let mask = common_rr_mask(rows)?;
    let mut out = Vec::new();
    let (mut defined, mut total) = (0, 0);
    for r in rows {
        let rr = ratio_bias(&r.estimated.effects()?, &r.truth.effects()?, mask.as_deref());
        defined = rr.defined;
        total = rr.bias.len();
        out.push(Row {
            method: &r.meta.method,
            values: [
                r.natural.mean_abs,
                r.always.mean_abs,
                r.never.mean_abs,
                r.effect.rd.mean_abs,
                rr.mean_abs,
            ],
        });
    }
    Ok((out, defined, total))
}

fn markdown_table(scenario: &str, n: usize, rows: &[Row], defined: usize, total: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Bias: {scenario} scenario, n = {n}\n");
    s.push_str("| Method | Bias in risk estimates: Natural course | Always treat | Never treat | Bias in causal effect estimates: Risk difference | Risk ratio |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    for r in rows {
        let v = r.values;
        let _ = writeln!(
            s,
            "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |",
            r.method, v[0], v[1], v[2], v[3], v[4]
        );
    }
    if !rows.is_empty() {
        let _ = writeln!(
            s,
            "\nMean absolute bias over all {total} months; the risk ratio over the {defined} months where it is defined for the truth and every method ({} excluded).",
            total - defined
        );
    }
    s
}

fn csv_table(rows: &[Row], defined: usize) -> String {
    let mut s = String::from(
        "method,natural_course,always_treat,never_treat,risk_difference,risk_ratio,rr_months\n",
    );
    for r in rows {
        let v = r.values;
        let _ = writeln!(
            s,
            "{},{:.3},{:.3},{:.3},{:.3},{:.3},{defined}",
            csv_field(r.method),
            v[0],
            v[1],
            v[2],
            v[3],
            v[4]
        );
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn curve(r: &StrategyRisks, quantity: &str) -> Result<Vec<Option<f64>>> {
    Ok(match quantity {
        "natural" => r.natural.values.iter().copied().map(Some).collect(),
        "always" => r.always.values.iter().copied().map(Some).collect(),
        "never" => r.never.values.iter().copied().map(Some).collect(),
        "rd" => r.effects()?.rd.into_iter().map(Some).collect(),
        _ => r.effects()?.rr,
    })
}

/// Columns: `k`, `truth`, then one per method.
fn figure_columns(rows: &[&BiasReport], quantity: &str) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut names = vec!["truth".to_string()];
    let mut cols = vec![curve(&rows[0].truth, quantity)?];
    for r in rows {
        names.push(r.meta.method.clone());
        cols.push(curve(&r.estimated, quantity)?);
    }
    Ok((names, cols))
}

fn figure_csv(names: &[String], cols: &[Vec<Option<f64>>]) -> String {
    let mut s = String::from("k");
    for n in names {
        s.push(',');
        s.push_str(&csv_field(n));
    }
    s.push('\n');
    let len = cols.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..len {
        let _ = write!(s, "{}", k + 1);
        for c in cols {
            match c.get(k).copied().flatten() {
                Some(v) => {
                    let _ = write!(s, ",{v}");
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

const PALETTE: [&str; 6] = ["#000000", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal line chart, one polyline per column.
fn figure_svg(title: &str, names: &[String], cols: &[Vec<Option<f64>>]) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let len = cols.iter().map(Vec::len).max().unwrap_or(1).max(2);
    let vals = cols.iter().flatten().flatten().copied();
    let (mut lo, mut hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let x = |k: usize| m + (w - 2.0 * m) * k as f64 / (len - 1) as f64;
    let y = |v: f64| h - m - (h - 2.0 * m) * (v - lo) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{m}" y="20">{}</text>"#, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} V{b} H{r}" stroke="black" fill="none"/>"#,
        t = m,
        b = h - m,
        r = w - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}">{lo:.3}</text>"#, 4.0, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}">{hi:.3}</text>"#, 4.0, m + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}">month</text>"#, w / 2.0, h - 15.0);
    for (i, (name, c)) in names.iter().zip(cols).enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.map(|v| format!("{:.2},{:.2}", x(k), y(v))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{colour}" fill="none" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{colour}">{}</text>"#,
            w - m - 150.0,
            m + 16.0 * i as f64,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `table_<scenario>_<n>.{md,csv}` for every group (the four standard
/// tables always) and `fig_<scenario>_<n>_<quantity>.csv` (plus `.svg` when
/// requested) for every non-empty group. Returns the written paths in
/// order. Output depends only on `reports`.
pub fn render_report(reports: &[BiasReport], dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut write = |name: String, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text)?;
        written.push(p);
        Ok(())
    };
    for ((scenario, n), rows) in group(reports) {
        let (table, defined, total) = table_rows(&rows)?;
        write(format!("table_{scenario}_{n}.md"), markdown_table(&scenario, n, &table, defined, total))?;
        write(format!("table_{scenario}_{n}.csv"), csv_table(&table, defined))?;
        if rows.is_empty() {
            continue;
        }
        for q in QUANTITIES {
            let (names, cols) = figure_columns(&rows, q)?;
            write(format!("fig_{scenario}_{n}_{q}.csv"), figure_csv(&names, &cols))?;
            if svg {
                let title = format!("{scenario}, n = {n}: {q}");
                write(format!("fig_{scenario}_{n}_{q}.svg"), figure_svg(&title, &names, &cols))?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(v: &[f64]) -> RiskCurve {
        RiskCurve::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_curves_have_zero_bias() {
        let c = curve(&[0.1, 0.2, 0.3]);
        let b = risk_bias(&c, &c).unwrap();
        assert_eq!(b.bias, vec![0.0; 3]);
        assert_eq!(b.mean_abs, 0.0);
    }

    #[test]
    fn constant_shift_gives_shift() {
        let t = curve(&[0.1, 0.2, 0.3, 0.4]);
        let e = curve(&[0.11, 0.21, 0.31, 0.41]);
        assert!((risk_bias(&e, &t).unwrap().mean_abs - 0.01).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(risk_bias(&curve(&[0.1]), &curve(&[0.1, 0.2])).is_err());
        assert!(effects(&curve(&[0.1]), &curve(&[0.1, 0.2])).is_err());
    }

    #[test]
    fn effect_arithmetic() {
        let e = effects(&curve(&[0.2]), &curve(&[0.1])).unwrap();
        assert!((e.rd[0] - 0.1).abs() < 1e-15);
        assert!((e.rr[0].unwrap() - 2.0).abs() < 1e-15);
        let same = effects(&curve(&[0.1, 0.3]), &curve(&[0.1, 0.3])).unwrap();
        assert_eq!(same.rd, vec![0.0, 0.0]);
        assert_eq!(same.rr, vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn zero_reference_risk_leaves_ratio_undefined() {
        let e = effects(&curve(&[0.0, 0.1]), &curve(&[0.0, 0.05])).unwrap();
        assert_eq!(e.rr[0], None);
        let t = effects(&curve(&[0.01, 0.1]), &curve(&[0.01, 0.05])).unwrap();
        let b = effect_bias(&e, &t).unwrap();
        assert_eq!(b.rr.defined, 1);
        assert_eq!(b.rr.excluded, 1);
        assert!((b.rr.mean_abs - 0.0).abs() < 1e-12);
    }

    fn report(method: &str, n: usize, shift: f64) -> BiasReport {
        let truth = StrategyRisks {
            natural: curve(&[0.0, 0.1, 0.2]),
            always: curve(&[0.0, 0.15, 0.25]),
            never: curve(&[0.0, 0.05, 0.1]),
        };
        let s = |c: &RiskCurve| curve(&c.values.iter().map(|v| v + shift).collect::<Vec<_>>());
        let est = StrategyRisks { natural: s(&truth.natural), always: s(&truth.always), never: s(&truth.never) };
        let meta = ReportMeta {
            scenario: "simple".into(),
            n,
            method: method.into(),
            simulation_seed: 1,
            training_seed: 2,
            monte_carlo_seed: 3,
        };
        BiasReport::new(meta, est, truth).unwrap()
    }

    #[test]
    fn empty_report_list_writes_header_only_tables() {
        let dir = tempfile::tempdir().unwrap();
        let files = render_report(&[], dir.path(), true).unwrap();
        assert_eq!(files.len(), 8);
        let csv = fs::read_to_string(dir.path().join("table_simple_1000.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn one_report_gives_one_row_and_figures() {
        let dir = tempfile::tempdir().unwrap();
        render_report(&[report("Parametric", 1000, 0.01)], dir.path(), true).unwrap();
        let csv = fs::read_to_string(dir.path().join("table_simple_1000.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("Parametric,0.010,0.010,0.010,0.000,"));
        let fig = fs::read_to_string(dir.path().join("fig_simple_1000_natural.csv")).unwrap();
        assert_eq!(fig.lines().next(), Some("k,truth,Parametric"));
        assert_eq!(fig.lines().count(), 4);
        assert!(dir.path().join("fig_simple_1000_rr.svg").exists());
        let md = fs::read_to_string(dir.path().join("table_simple_1000.md")).unwrap();
        assert!(md.contains("| Parametric | 0.010 |"));
        assert!(md.contains("(1 excluded)"));
    }

    #[test]
    fn ratio_months_are_shared_across_methods() {
        let a = report("A", 10000, 0.0);
        let mut b = report("B", 10000, 0.0);
        // Method B has a zero never-treat risk in month 2 as well.
        b.estimated.never = curve(&[0.0, 0.0, 0.1]);
        let dir = tempfile::tempdir().unwrap();
        render_report(&[a, b], dir.path(), false).unwrap();
        let csv = fs::read_to_string(dir.path().join("table_simple_10000.csv")).unwrap();
        for line in csv.lines().skip(1) {
            assert!(line.ends_with(",1"), "{line}");
        }
    }

    #[test]
    fn rendering_is_byte_deterministic() {
        let reports = [report("Parametric", 1000, 0.01), report("DL-NICE", 1000, 0.002)];
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let f1 = render_report(&reports, d1.path(), true).unwrap();
        render_report(&reports, d2.path(), true).unwrap();
        for p in f1 {
            let name = p.file_name().unwrap();
            assert_eq!(fs::read(&p).unwrap(), fs::read(d2.path().join(name)).unwrap());
        }
    }

    proptest! {
        #[test]
        fn mean_bias_bounded_by_mean_absolute_bias(
            pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..60)
        ) {
            let mut e: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let mut t: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            e.sort_by(f64::total_cmp);
            t.sort_by(f64::total_cmp);
            let (e, t) = (curve(&e), curve(&t));
            let b = risk_bias(&e, &t).unwrap();
            prop_assert!(b.mean.abs() <= b.mean_abs + 1e-15);
            prop_assert_eq!(risk_bias(&t, &t).unwrap().mean_abs, 0.0);
            let fx = effects(&e, &t).unwrap();
            let fy = effects(&t, &e).unwrap();
            let ab = effect_bias(&fx, &fy).unwrap();
            let ba = effect_bias(&fy, &fx).unwrap();
            for (x, y) in ab.rd.bias.iter().zip(&ba.rd.bias) {
                prop_assert!((x + y).abs() < 1e-15);
            }
            for (x, y) in ab.rr.bias.iter().zip(&ba.rr.bias) {
                match (x, y) {
                    (Some(x), Some(y)) => prop_assert!((x + y).abs() < 1e-12),
                    (None, None) => {}
                    _ => prop_assert!(false),
                }
            }
        }
    }
}
