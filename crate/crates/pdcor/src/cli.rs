//! Command-line surface. `dispatch` is the testable entry point; exit
//! codes are 0 success, 1 usage, 2 data error, 3 numerical degeneracy.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::dump::{read_csv_as_dump, read_dump, FeatureDump};
use crate::error::{Error, Result};
use crate::experiments::{layer_similarity_heatmap, run_desk_protocol, DeskProtocol};
use crate::export::{attack_table_csv, export_heatmap, report_json, Provenance};
use crate::grad::{dcor_value_grad, finite_diff_check, pdcor_value_grad, Wrt};
use crate::synth::{fig1_sampler, Fig1Case};
use crate::{dcor, pearson, SampleBatch};

#[derive(Parser)]
#[command(name = "pdcor", version, about = "Distance correlation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distance correlation between one layer of each dump.
    Dcor {
        dump_a: PathBuf,
        dump_b: PathBuf,
        #[arg(long)]
        layer_a: String,
        #[arg(long)]
        layer_b: String,
        /// Number of leading samples to use (default: all common samples).
        #[arg(short)]
        n: Option<usize>,
    },
    /// Partial distance correlation R*^2 of (x | y) against the embedding dump.
    Pdcor {
        dump_x: PathBuf,
        dump_y: PathBuf,
        dump_gt: PathBuf,
        #[arg(long)]
        layer_x: String,
        #[arg(long)]
        layer_y: String,
        #[arg(long)]
        layer_gt: String,
        #[arg(short)]
        n: Option<usize>,
    },
    /// Layer-similarity heatmap within one dump or across two.
    Heatmap {
        dump_a: PathBuf,
        dump_b: Option<PathBuf>,
        /// Output path stem; writes `<stem>.csv` and `<stem>.json`.
        #[arg(short, long)]
        output: PathBuf,
        #[arg(short, default_value_t = 256)]
        n: usize,
        /// Worker thread bound for the cell computations.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Train the baseline and DC-regularized pairs; write metrics JSON.
    TrainPair {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train both pairs and write the transfer-attack table as CSV.
    AttackEval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check analytic gradients against central finite differences.
    GradCheck {
        /// Which loss to check (default: both).
        #[arg(long)]
        loss: Option<String>,
    },
    /// Sample one of the four example distributions; print Pearson and dCor.
    Fig1 {
        #[arg(long)]
        case: String,
        #[arg(short)]
        n: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Run the oracle-equivalence and property suites.
    Selftest,
}

/// Run configuration for the training commands. The master seed drives
/// data generation, model initialization, and shuffling.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub protocol: DeskProtocol,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.protocol.train.seed = cfg.seed;
        Ok(cfg)
    }
}

/// Parse and execute. Returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap renders its own help/usage text
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_any_dump(path: &Path) -> Result<FeatureDump> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv_as_dump(path, "csv"),
        _ => read_dump(path),
    }
}

fn layer_head(dump: &FeatureDump, layer: &str, n: Option<usize>) -> Result<SampleBatch> {
    let l = dump.layer(layer)?;
    match n {
        Some(n) => l.data.head(n),
        None => Ok(l.data.clone()),
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Dcor {
            dump_a,
            dump_b,
            layer_a,
            layer_b,
            n,
        } => {
            let da = load_any_dump(&dump_a)?;
            let db = load_any_dump(&dump_b)?;
            let take = n.unwrap_or_else(|| da.n().min(db.n()));
            if da.sample_ids.len() < take
                || db.sample_ids.len() < take
                || da.sample_ids[..take] != db.sample_ids[..take]
            {
                return Err(Error::InvalidInput(
                    "dumps do not share sample ids over the requested prefix".into(),
                ));
            }
            let a = layer_head(&da, &layer_a, Some(take))?;
            let b = layer_head(&db, &layer_b, Some(take))?;
            let report = dcor(&a, &b)?;
            println!("{:.6}", report.dcor);
            Ok(())
        }
        Command::Pdcor {
            dump_x,
            dump_y,
            dump_gt,
            layer_x,
            layer_y,
            layer_gt,
            n,
        } => {
            let dx = load_any_dump(&dump_x)?;
            let dy = load_any_dump(&dump_y)?;
            let dg = load_any_dump(&dump_gt)?;
            let take = n.unwrap_or_else(|| dx.n().min(dy.n()).min(dg.n()));
            let x = layer_head(&dx, &layer_x, Some(take))?;
            let y = layer_head(&dy, &layer_y, Some(take))?;
            let gt = layer_head(&dg, &layer_gt, Some(take))?;
            let report = crate::pdc::pdcor(&x, &gt, &y)?;
            println!("{:.6}", report.pdcor2);
            Ok(())
        }
        Command::Heatmap {
            dump_a,
            dump_b,
            output,
            n,
            parallel,
        } => {
            let da = load_any_dump(&dump_a)?;
            let db = match &dump_b {
                Some(p) => load_any_dump(p)?,
                None => da.clone(),
            };
            let n = n.min(da.n()).min(db.n());
            let hm = match parallel {
                Some(k) => {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(k.max(1))
                        .build()
                        .map_err(|e| Error::InvalidInput(e.to_string()))?;
                    pool.install(|| layer_similarity_heatmap(&da, &db, n))?
                }
                None => layer_similarity_heatmap(&da, &db, n)?,
            };
            let (csv, json) = export_heatmap(&hm, &output)?;
            eprintln!("wrote {} and {}", csv.display(), json.display());
            Ok(())
        }
        Command::TrainPair { config } => {
            let cfg = RunConfig::load(&config)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let outcome = run_desk_protocol(&cfg.protocol)?;
            let provenance = Provenance::new(
                cfg.seed,
                cfg.protocol.data.train,
                cfg.protocol.train.batch_size,
            );
            let json = report_json(&provenance, &outcome)?;
            let path = cfg.out_dir.join("metrics.json");
            std::fs::write(&path, json)?;
            eprintln!("wrote {}", path.display());
            println!(
                "baseline dcor {:.6} dc dcor {:.6} clean base {:.4} clean dc {:.4}",
                outcome.baseline.final_cross_dcor,
                outcome.dc.final_cross_dcor,
                outcome.baseline.clean_acc_f2,
                outcome.dc.clean_acc_f2
            );
            Ok(())
        }
        Command::AttackEval { config } => {
            let cfg = RunConfig::load(&config)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let outcome = run_desk_protocol(&cfg.protocol)?;
            let mut csv = String::from("pair,");
            let base = attack_table_csv(&outcome.baseline_table);
            let dc = attack_table_csv(&outcome.dc_table);
            // prefix each data row with its pair name
            let mut lines = base.lines();
            csv.push_str(lines.next().unwrap());
            csv.push('\n');
            for l in lines {
                csv.push_str(&format!("baseline,{l}\n"));
            }
            for l in dc.lines().skip(1) {
                csv.push_str(&format!("dc,{l}\n"));
            }
            let path = cfg.out_dir.join("attack_table.csv");
            std::fs::write(&path, &csv)?;
            let provenance = Provenance::new(
                cfg.seed,
                cfg.protocol.data.test,
                cfg.protocol.train.batch_size,
            );
            let json = report_json(&provenance, &outcome)?;
            std::fs::write(cfg.out_dir.join("metrics.json"), json)?;
            eprintln!("wrote {}", path.display());
            print!("{csv}");
            Ok(())
        }
        Command::GradCheck { loss } => {
            let which = loss.as_deref().unwrap_or("both");
            let mut worst = 0.0f64;
            if which == "dcor" || which == "both" {
                let x = SampleBatch::new(crate::rng::standard_normal_matrix(
                    &mut crate::rng::seeded(1),
                    16,
                    5,
                ))?;
                let y = SampleBatch::new(crate::rng::standard_normal_matrix(
                    &mut crate::rng::seeded(2),
                    16,
                    3,
                ))?;
                let d = finite_diff_check(|b| dcor_value_grad(b, &y, Wrt::X), &x, 1e-5)?;
                println!("dcor max relative discrepancy {d:.3e}");
                worst = worst.max(d);
            }
            if which == "pdcor" || which == "both" {
                let x = SampleBatch::new(crate::rng::standard_normal_matrix(
                    &mut crate::rng::seeded(3),
                    16,
                    5,
                ))?;
                let y = SampleBatch::new(crate::rng::standard_normal_matrix(
                    &mut crate::rng::seeded(4),
                    16,
                    3,
                ))?;
                let z = SampleBatch::new(crate::rng::standard_normal_matrix(
                    &mut crate::rng::seeded(5),
                    16,
                    2,
                ))?;
                let d = finite_diff_check(|b| pdcor_value_grad(b, &y, &z), &x, 1e-5)?;
                println!("pdcor max relative discrepancy {d:.3e}");
                worst = worst.max(d);
            }
            if !["dcor", "pdcor", "both"].contains(&which) {
                return Err(Error::InvalidInput(format!("unknown loss '{which}'")));
            }
            if worst >= 1e-6 {
                return Err(Error::Degenerate(format!(
                    "gradient check failed: discrepancy {worst:.3e}"
                )));
            }
            Ok(())
        }
        Command::Fig1 { case, n, seed } => {
            let case: Fig1Case = case.parse()?;
            let (x, y) = fig1_sampler(case, n, seed)?;
            let xv: Vec<f64> = x.view().column(0).to_vec();
            let yv: Vec<f64> = y.view().column(0).to_vec();
            println!("pearson {:.6}", pearson(&xv, &yv)?);
            println!("dcor {:.6}", dcor(&x, &y)?.dcor);
            Ok(())
        }
        Command::Selftest => selftest(),
    }
}

/// Oracle-equivalence and property checks, printed one line per suite.
fn selftest() -> Result<()> {
    use crate::reference;
    let mut failures = 0usize;

    // optimized vs naive direct-formula implementations
    let mut worst_dcor = 0.0f64;
    let mut worst_inner = 0.0f64;
    let mut worst_pdc = 0.0f64;
    for i in 0..40u64 {
        let mut r = crate::rng::substream(1234, i);
        let n = 4 + (i as usize % 13) * 2;
        let p = 1 + (i as usize % 5);
        let q = 1 + ((i as usize + 2) % 5);
        let x = SampleBatch::new(crate::rng::standard_normal_matrix(&mut r, n, p))?;
        let y = SampleBatch::new(crate::rng::standard_normal_matrix(&mut r, n, q))?;
        let z = SampleBatch::new(crate::rng::standard_normal_matrix(&mut r, n, 2))?;

        let got = dcor(&x, &y)?.dcor;
        let want = reference::naive_dcor(&x, &y)?;
        worst_dcor = worst_dcor.max(rel_err(got, want));

        let got = crate::pdc::u_inner(
            &crate::pdc::u_centered_of(&x)?,
            &crate::pdc::u_centered_of(&y)?,
        )?;
        let want = reference::naive_u_inner(&x, &y)?;
        worst_inner = worst_inner.max(rel_err(got, want));

        let got = crate::pdc::pdcor(&x, &y, &z)?.pdcor2;
        let want = reference::naive_pdcor2(&x, &y, &z)?;
        worst_pdc = worst_pdc.max(rel_err(got, want));
    }
    failures += suite_line("oracle dcor", worst_dcor < 1e-12, worst_dcor);
    failures += suite_line("oracle u_inner", worst_inner < 1e-12, worst_inner);
    failures += suite_line("oracle pdcor", worst_pdc < 1e-12, worst_pdc);

    // basic properties
    let mut worst_self = 0.0f64;
    let mut worst_sym = 0.0f64;
    for i in 0..20u64 {
        let mut r = crate::rng::substream(99, i);
        let x = SampleBatch::new(crate::rng::standard_normal_matrix(&mut r, 10, 3))?;
        let y = SampleBatch::new(crate::rng::standard_normal_matrix(&mut r, 10, 2))?;
        worst_self = worst_self.max((dcor(&x, &x)?.dcor - 1.0).abs());
        worst_sym = worst_sym.max((dcor(&x, &y)?.dcor - dcor(&y, &x)?.dcor).abs());
    }
    failures += suite_line("self-correlation", worst_self < 1e-12, worst_self);
    failures += suite_line("symmetry", worst_sym == 0.0, worst_sym);

    // gradient checks
    let x = SampleBatch::new(crate::rng::standard_normal_matrix(&mut crate::rng::seeded(7), 12, 4))?;
    let y = SampleBatch::new(crate::rng::standard_normal_matrix(&mut crate::rng::seeded(8), 12, 3))?;
    let z = SampleBatch::new(crate::rng::standard_normal_matrix(&mut crate::rng::seeded(9), 12, 2))?;
    let d1 = finite_diff_check(|b| dcor_value_grad(b, &y, Wrt::X), &x, 1e-5)?;
    let d2 = finite_diff_check(|b| pdcor_value_grad(b, &y, &z), &x, 1e-5)?;
    failures += suite_line("grad dcor", d1 < 1e-6, d1);
    failures += suite_line("grad pdcor", d2 < 1e-6, d2);

    if failures > 0 {
        return Err(Error::Degenerate(format!("{failures} selftest suites failed")));
    }
    Ok(())
}

fn suite_line(name: &str, pass: bool, worst: f64) -> usize {
    println!(
        "{}: {} (worst {worst:.3e})",
        name,
        if pass { "PASS" } else { "FAIL" }
    );
    usize::from(!pass)
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-30)
}
