//! Per-image results, per-method aggregates, and the CSV serialization.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::attribution::Method;
use crate::error::{GadError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub id: String,
    pub class: usize,
    pub method: Method,
    pub area_orig: usize,
    pub area_gad: usize,
    pub rc: Option<f32>,
    pub rs_gad: Option<f32>,
    pub rs_sup: Option<f32>,
}

/// Aggregate over one method; `class` is `None` for the all-classes row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub class: Option<usize>,
    pub images: usize,
    /// Images where the filtered hull is strictly smaller.
    pub rc_below_one: usize,
    pub rc_at_least_one: usize,
    pub rc_undefined: usize,
    /// Mean sensitivity ratios on the 10² scale, over defined values.
    pub mean_rs_gad_x100: Option<f64>,
    pub mean_rs_sup_x100: Option<f64>,
    pub rs_gad_undefined: usize,
    pub rs_sup_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ImageResult>,
    pub aggregates: Vec<MethodAggregate>,
}

fn mean_x100(values: impl Iterator<Item = Option<f32>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut missing) = (0.0f64, 0usize, 0usize);
    for v in values {
        match v {
            Some(v) => {
                sum += v as f64;
                n += 1;
            }
            None => missing += 1,
        }
    }
    ((n > 0).then(|| 100.0 * sum / n as f64), missing)
}

fn aggregate(method: Method, class: Option<usize>, rows: &[&ImageResult]) -> MethodAggregate {
    let (mean_rs_gad_x100, rs_gad_undefined) = mean_x100(rows.iter().map(|r| r.rs_gad));
    let (mean_rs_sup_x100, rs_sup_undefined) = mean_x100(rows.iter().map(|r| r.rs_sup));
    MethodAggregate {
        method,
        class,
        images: rows.len(),
        rc_below_one: rows
            .iter()
            .filter(|r| r.rc.is_some_and(|v| v < 1.0))
            .count(),
        rc_at_least_one: rows
            .iter()
            .filter(|r| r.rc.is_some_and(|v| v >= 1.0))
            .count(),
        rc_undefined: rows.iter().filter(|r| r.rc.is_none()).count(),
        mean_rs_gad_x100,
        mean_rs_sup_x100,
        rs_gad_undefined,
        rs_sup_undefined,
    }
}

/// Groups rows by method (in [`Method::ALL`] order), emitting one row per
/// class followed by the all-classes row.
pub fn aggregate_report(rows: Vec<ImageResult>) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(GadError::invalid("cannot aggregate an empty result list"));
    }
    let mut aggregates = Vec::new();
    for method in Method::ALL {
        let of_method: Vec<&ImageResult> = rows.iter().filter(|r| r.method == method).collect();
        if of_method.is_empty() {
            continue;
        }
        let mut classes: Vec<usize> = of_method.iter().map(|r| r.class).collect();
        classes.sort_unstable();
        classes.dedup();
        for c in classes {
            let sub: Vec<&ImageResult> =
                of_method.iter().copied().filter(|r| r.class == c).collect();
            aggregates.push(aggregate(method, Some(c), &sub));
        }
        aggregates.push(aggregate(method, None, &of_method));
    }
    Ok(EvalReport { rows, aggregates })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl EvalReport {
    pub fn overall(&self, method: Method) -> Option<&MethodAggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.class.is_none())
    }

    /// One row per (image, method) followed by a blank line and the
    /// aggregate block.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,class,method,rc,rs_gad,rs_sup\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.id,
                r.class,
                r.method,
                opt(r.rc),
                opt(r.rs_gad),
                opt(r.rs_sup)
            );
        }
        s.push_str("\nmethod,class,images,rc_lt_1,rc_ge_1,rc_undefined,mean_rs_gad_x100,mean_rs_sup_x100,rs_gad_undefined,rs_sup_undefined\n");
        for a in &self.aggregates {
            let class = a.class.map_or_else(|| "all".to_string(), |c| c.to_string());
            let _ = writeln!(
                s,
                "{},{class},{},{},{},{},{},{},{},{}",
                a.method,
                a.images,
                a.rc_below_one,
                a.rc_at_least_one,
                a.rc_undefined,
                opt(a.mean_rs_gad_x100.map(|v| format!("{v:.6}"))),
                opt(a.mean_rs_sup_x100.map(|v| format!("{v:.6}"))),
                a.rs_gad_undefined,
                a.rs_sup_undefined
            );
        }
        s
    }

    /// Human-readable summary in the layout of a per-method comparison table.
    pub fn summary_table(&self) -> String {
        let mut s =
            String::from("method  RC<1(GAD)  RC>=1(orig)  undef  RS_GAD(x100)  RS_Sup(x100)\n");
        for a in self.aggregates.iter().filter(|a| a.class.is_none()) {
            let _ = writeln!(
                s,
                "{:<6}  {:>9}  {:>11}  {:>5}  {:>12}  {:>12}",
                a.method.short(),
                a.rc_below_one,
                a.rc_at_least_one,
                a.rc_undefined,
                opt(a.mean_rs_gad_x100.map(|v| format!("{v:.4}"))),
                opt(a.mean_rs_sup_x100.map(|v| format!("{v:.4}"))),
            );
        }
        s
    }
}
