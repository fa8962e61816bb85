//! Experiment execution and output files.
//!
//! All files go directly under the configured output directory (plus
//! `shards/` when exporting); names are built from sanitized cell labels, so
//! nothing can escape it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use fedshift_core::data::gaussian_benchmark;
use fedshift_core::server::{rounds_to_accuracy, run_training, speedup};
use fedshift_core::theory::{self, CheckReport};
use fedshift_core::{Architecture, ClientShard, Dataset, RoundRecord, StrategySpec};

use crate::config::{ExperimentConfig, Mode};
use crate::shards;

/// `(alpha bits, clients, fraction bits, local epochs)`: a cell minus its
/// strategy.
type Setting = (u64, usize, u64, usize);

/// One point of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub strategy: StrategySpec,
    pub alpha: f64,
    pub clients: usize,
    pub fraction: f64,
    pub local_epochs: usize,
}

impl Cell {
    /// File-safe identifier, unique within a grid.
    pub fn name(&self) -> String {
        let strategy = match self.strategy {
            StrategySpec::FedProx { lambda } => format!("fedprox-l{lambda}"),
            s => s.name().to_string(),
        };
        let raw = format!(
            "{strategy}_a{}_n{}_c{}_e{}",
            self.alpha, self.clients, self.fraction, self.local_epochs
        );
        raw.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "._-".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    }

    /// The non-strategy part of the cell, used to pair cells with their
    /// FedAvg baseline and to label table columns.
    fn setting(&self) -> Setting {
        (
            self.alpha.to_bits(),
            self.clients,
            self.fraction.to_bits(),
            self.local_epochs,
        )
    }
}

fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

/// The grid in run order: alpha, clients, fraction, epochs, then strategy
/// innermost. Train mode is the one-cell grid of the base values.
pub fn cells(cfg: &ExperimentConfig, imported_clients: Option<usize>) -> Vec<Cell> {
    let sweep = cfg.mode == Mode::Sweep;
    let axis = |v: &[f64], base: f64| if sweep { or_base(v, base) } else { vec![base] };
    let axis_n = |v: &[usize], base: usize| if sweep { or_base(v, base) } else { vec![base] };
    let strategies = if sweep {
        or_base(&cfg.sweep_strategy, cfg.strategy)
    } else {
        vec![cfg.strategy]
    };
    let clients = match imported_clients {
        Some(n) => vec![n],
        None => axis_n(&cfg.sweep_clients, cfg.clients),
    };
    let mut out = Vec::new();
    for &alpha in &axis(&cfg.sweep_alpha, cfg.alpha) {
        for &n in &clients {
            for &fraction in &axis(&cfg.sweep_fraction, cfg.fraction) {
                for &local_epochs in &axis_n(&cfg.sweep_local_epochs, cfg.local_epochs) {
                    for &strategy in &strategies {
                        out.push(Cell {
                            strategy,
                            alpha,
                            clients: n,
                            fraction,
                            local_epochs,
                        });
                    }
                }
            }
        }
    }
    out
}

pub struct CellResult {
    pub cell: Cell,
    pub outcome: Result<Vec<RoundRecord>, String>,
}

impl CellResult {
    fn records(&self) -> Option<&[RoundRecord]> {
        self.outcome.as_deref().ok()
    }

    fn final_accuracy(&self) -> Option<f64> {
        self.records()?.iter().rev().find_map(|r| r.test_accuracy)
    }
}

type Data = (Vec<ClientShard>, Dataset);

fn echo_lines(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.echo()
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}"))
        .collect()
}

fn write(out: &Path, name: &str, contents: &str) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Runs the configured experiment. Returns `Ok(false)` if any cell or check
/// failed; `Err` only for setup and IO errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<bool> {
    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    match cfg.mode {
        Mode::Theory => run_theory(cfg),
        Mode::Train | Mode::Sweep => run_grid(cfg),
    }
}

fn data_key(cell: &Cell) -> (u64, usize) {
    (cell.alpha.to_bits(), cell.clients)
}

fn run_grid(cfg: &ExperimentConfig) -> Result<bool> {
    let imported = cfg
        .shards_dir
        .as_deref()
        .map(shards::load_shards)
        .transpose()
        .context("loading shards")?;
    let grid = cells(cfg, imported.as_ref().map(|(s, _)| s.len()));
    let (classes, input_dim) = match &imported {
        Some((_, test)) => (test.num_classes, test.input_dim),
        None => (cfg.classes, cfg.input_dim),
    };
    let arch = Architecture::new(input_dim, cfg.hidden.clone(), classes)?;

    let mut data: BTreeMap<(u64, usize), Data> = BTreeMap::new();
    for cell in &grid {
        let key = data_key(cell);
        if data.contains_key(&key) {
            continue;
        }
        let d = match &imported {
            Some(d) => d.clone(),
            None => {
                let b = gaussian_benchmark(&cfg.benchmark_spec(cell.alpha, cell.clients))?;
                (b.shards, b.test)
            }
        };
        if cfg.export_shards {
            export(cfg, cell, &d)?;
        }
        data.insert(key, d);
    }

    let run_cell = |cell: &Cell| -> CellResult {
        let (shards, test) = &data[&data_key(cell)];
        let rc = cfg.run_config(cell.strategy, cell.local_epochs, cell.fraction);
        let start = Instant::now();
        let outcome = run_training(&rc, &arch, shards, test)
            .map(|r| r.records)
            .map_err(|e| e.to_string());
        match &outcome {
            Ok(records) => info!(
                "{}: final accuracy {:.4} ({:.1}s)",
                cell.name(),
                records
                    .iter()
                    .rev()
                    .find_map(|r| r.test_accuracy)
                    .unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            ),
            Err(e) => log::error!("{}: {e}", cell.name()),
        }
        CellResult {
            cell: cell.clone(),
            outcome,
        }
    };
    let results: Vec<CellResult> = if cfg.parallel {
        grid.par_iter().map(run_cell).collect()
    } else {
        grid.iter().map(run_cell).collect()
    };

    let echo = echo_lines(cfg);
    for r in &results {
        if let Some(records) = r.records() {
            write(
                &cfg.out,
                &format!("curve_{}.csv", r.cell.name()),
                &curve_csv(&echo, &r.cell, records),
            )?;
        }
    }
    let summary = summarize(cfg, &results);
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    write(&cfg.out, "summary.json", &json)?;
    let table = render_table(&echo, &summary);
    write(&cfg.out, "table.txt", &table)?;
    print!("{table}");
    let mut ok = true;
    for r in &results {
        if let Err(e) = &r.outcome {
            eprintln!("error: {}: {e}", r.cell.name());
            ok = false;
        }
    }
    Ok(ok)
}

fn export(cfg: &ExperimentConfig, cell: &Cell, (shards, test): &Data) -> Result<()> {
    let dir = cfg
        .out
        .join("shards")
        .join(format!("a{}_n{}", cell.alpha, cell.clients).replace(
            |c: char| !c.is_ascii_alphanumeric() && !"._".contains(c),
            "_",
        ));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let echo = echo_lines(cfg);
    for s in shards {
        let path = shards::client_file(&dir, s.client_id);
        fs::write(&path, shards::write_dataset(&s.data, &echo))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let path = shards::test_file(&dir);
    fs::write(&path, shards::write_dataset(test, &echo))
        .with_context(|| format!("writing {}", path.display()))
}

fn cell_echo(cell: &Cell) -> [String; 5] {
    [
        format!("cell.strategy = {}", cell.strategy),
        format!("cell.alpha = {}", cell.alpha),
        format!("cell.clients = {}", cell.clients),
        format!("cell.fraction = {}", cell.fraction),
        format!("cell.local_epochs = {}", cell.local_epochs),
    ]
}

/// `round,accuracy,train_loss,participants,eta`; accuracy is empty for
/// rounds that were not evaluated, participants are space-separated ids.
pub fn curve_csv(echo: &[String], cell: &Cell, records: &[RoundRecord]) -> String {
    let mut out = String::new();
    for line in echo.iter().chain(cell_echo(cell).iter()) {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("round,accuracy,train_loss,participants,eta\n");
    for r in records {
        let ids: Vec<String> = r.participants.iter().map(ToString::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.round,
            r.test_accuracy.map(|a| a.to_string()).unwrap_or_default(),
            r.train_loss,
            ids.join(" "),
            r.eta
        );
    }
    out
}

#[derive(Debug, Serialize)]
pub struct CellSummary {
    pub name: String,
    pub strategy: String,
    pub alpha: f64,
    pub clients: usize,
    pub fraction: f64,
    pub local_epochs: usize,
    pub final_accuracy: Option<f64>,
    /// First round at which the cell reached its own final accuracy.
    pub rounds_to_own_final: Option<usize>,
    /// The FedAvg cell with the same setting, if the grid has one.
    pub baseline: Option<String>,
    /// The baseline's final accuracy.
    pub target_accuracy: Option<f64>,
    pub rounds_to_target: Option<usize>,
    /// Baseline rounds to its own final accuracy over this cell's rounds to
    /// the same accuracy.
    pub speedup: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub config: BTreeMap<String, String>,
    pub cells: Vec<CellSummary>,
    pub failures: usize,
}

pub fn summarize(cfg: &ExperimentConfig, results: &[CellResult]) -> Summary {
    let baseline = |cell: &Cell| {
        results
            .iter()
            .find(|r| r.cell.strategy == StrategySpec::FedAvg && r.cell.setting() == cell.setting())
    };
    let cells = results
        .iter()
        .map(|r| {
            let base = baseline(&r.cell);
            let target = base.and_then(CellResult::final_accuracy);
            let base_rounds = base
                .and_then(|b| Some(rounds_to_accuracy(b.records()?, target?)))
                .flatten();
            let own = r
                .records()
                .zip(r.final_accuracy())
                .and_then(|(rec, acc)| rounds_to_accuracy(rec, acc));
            let to_target = r
                .records()
                .zip(target)
                .and_then(|(rec, t)| rounds_to_accuracy(rec, t));
            CellSummary {
                name: r.cell.name(),
                strategy: r.cell.strategy.to_string(),
                alpha: r.cell.alpha,
                clients: r.cell.clients,
                fraction: r.cell.fraction,
                local_epochs: r.cell.local_epochs,
                final_accuracy: r.final_accuracy(),
                rounds_to_own_final: own,
                baseline: base.map(|b| b.cell.name()),
                target_accuracy: target,
                rounds_to_target: to_target,
                speedup: base_rounds.and_then(|b| speedup(b, to_target)),
                error: r.outcome.as_ref().err().cloned(),
            }
        })
        .collect();
    Summary {
        config: cfg
            .echo()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        cells,
        failures: results.iter().filter(|r| r.outcome.is_err()).count(),
    }
}

/// Column label for a setting, naming only the axes that vary in the grid.
fn column_labels(cells: &[CellSummary]) -> Vec<(Setting, String)> {
    let key = |c: &CellSummary| {
        (
            c.alpha.to_bits(),
            c.clients,
            c.fraction.to_bits(),
            c.local_epochs,
        )
    };
    let mut cols: Vec<Setting> = Vec::new();
    for c in cells {
        if !cols.contains(&key(c)) {
            cols.push(key(c));
        }
    }
    let varies = |f: fn(&Setting) -> u64| cols.iter().any(|c| f(c) != f(&cols[0]));
    let (va, vn, vc, ve) = (
        varies(|c| c.0),
        varies(|c| c.1 as u64),
        varies(|c| c.2),
        varies(|c| c.3 as u64),
    );
    cols.iter()
        .map(|&c| {
            let mut parts = Vec::new();
            if va {
                parts.push(format!("alpha={}", f64::from_bits(c.0)));
            }
            if vn {
                parts.push(format!("N={}", c.1));
            }
            if vc {
                parts.push(format!("C={}", f64::from_bits(c.2)));
            }
            if ve {
                parts.push(format!("E={}", c.3));
            }
            let label = if parts.is_empty() {
                "accuracy".to_string()
            } else {
                parts.join(",")
            };
            (c, label)
        })
        .collect()
}

fn pad_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|j| {
            rows.iter()
                .filter_map(|r| r.get(j))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("-+-"));
        }
    }
    out
}

/// Two tables: final accuracy per strategy and setting, then rounds to the
/// FedAvg final accuracy with the speedup over FedAvg. Cells that never reach
/// the target print `\` and `<1×`.
pub fn render_table(echo: &[String], summary: &Summary) -> String {
    let mut out = String::new();
    for line in echo {
        let _ = writeln!(out, "# {line}");
    }
    let cols = column_labels(&summary.cells);
    let mut strategies: Vec<&str> = Vec::new();
    for c in &summary.cells {
        if !strategies.contains(&c.strategy.as_str()) {
            strategies.push(&c.strategy);
        }
    }
    let find = |s: &str, key: &Setting| {
        summary.cells.iter().find(|c| {
            c.strategy == s
                && (
                    c.alpha.to_bits(),
                    c.clients,
                    c.fraction.to_bits(),
                    c.local_epochs,
                ) == *key
        })
    };

    let mut acc = vec![std::iter::once("method".to_string())
        .chain(cols.iter().map(|(_, l)| l.clone()))
        .collect::<Vec<_>>()];
    for s in &strategies {
        let mut row = vec![s.to_string()];
        for (key, _) in &cols {
            row.push(match find(s, key) {
                Some(CellSummary { error: Some(_), .. }) => "error".into(),
                Some(CellSummary {
                    final_accuracy: Some(a),
                    ..
                }) => format!("{:.2}%", 100.0 * a),
                _ => "-".into(),
            });
        }
        acc.push(row);
    }
    out.push_str("\nfinal test accuracy\n");
    out.push_str(&pad_table(&acc));

    let mut header = vec!["method".to_string()];
    for (_, l) in &cols {
        header.push(format!("{l} rounds"));
        header.push("speedup".into());
    }
    let mut rounds = vec![header];
    for s in &strategies {
        let mut row = vec![s.to_string()];
        for (key, _) in &cols {
            let (r, sp) = match find(s, key) {
                Some(c) if c.error.is_none() && c.target_accuracy.is_some() => {
                    match (c.rounds_to_target, c.speedup) {
                        (Some(r), Some(sp)) => (r.to_string(), format!("{sp:.2}×")),
                        _ => ("\\".to_string(), "<1×".to_string()),
                    }
                }
                _ => ("-".to_string(), "-".to_string()),
            };
            row.push(r);
            row.push(sp);
        }
        rounds.push(row);
    }
    out.push_str("\nrounds to the FedAvg final accuracy\n");
    out.push_str(&pad_table(&rounds));
    out
}

#[derive(Serialize)]
struct TheoryError {
    name: &'static str,
    error: String,
}

#[derive(Serialize)]
struct TheoryReport {
    config: BTreeMap<String, String>,
    checks: Vec<CheckReport>,
    errors: Vec<TheoryError>,
}

type Check = (
    &'static str,
    Box<dyn Fn(u64) -> fedshift_core::Result<CheckReport>>,
);

fn theory_checks() -> Vec<Check> {
    vec![
        (
            "shifted_local_optimum",
            Box::new(|s| theory::verify_shift_optimality(&theory::standard_optimality_setup(s)?)),
        ),
        (
            "local_contraction",
            Box::new(|s| theory::verify_local_contraction(&theory::standard_convex_setup(s)?)),
        ),
        (
            "shared_optimum_convergence",
            Box::new(|s| {
                theory::verify_shared_optimum_convergence(&theory::standard_convex_setup(s)?)
            }),
        ),
        (
            "fedavg_gap",
            Box::new(|s| theory::verify_fedavg_gap(&theory::standard_gap_setup(s)?)),
        ),
        (
            "nonconvex_rate",
            Box::new(|s| theory::verify_nonconvex_rate(&theory::standard_nonconvex_setup(s)?)),
        ),
        (
            "eta_halving",
            Box::new(|s| theory::verify_eta_halving(&theory::standard_eta_halving_setup(s)?)),
        ),
    ]
}

fn run_theory(cfg: &ExperimentConfig) -> Result<bool> {
    let mut report = TheoryReport {
        config: cfg
            .echo()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        checks: Vec::new(),
        errors: Vec::new(),
    };
    let mut ok = true;
    for (name, check) in theory_checks() {
        let start = Instant::now();
        match check(cfg.seed) {
            Ok(r) => {
                println!(
                    "{name}: {} ({:?}, margin {:.3e}, {:.1}s)",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.status,
                    r.margin,
                    start.elapsed().as_secs_f64()
                );
                ok &= r.pass;
                report.checks.push(r);
            }
            Err(e) => {
                println!("{name}: FAIL (error: {e})");
                ok = false;
                report.errors.push(TheoryError {
                    name,
                    error: e.to_string(),
                });
            }
        }
    }
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write(&cfg.out, "theory_report.json", &json)?;
    Ok(ok)
}
