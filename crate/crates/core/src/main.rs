use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nilheat::geometry::{build_model, convention_sheet, Geometry, ModelKind};
use nilheat::harness::{self, grid_label, parse_grid, Overrides, SuiteConfig, SuiteReport};

#[derive(Parser)]
#[command(name = "nilheat", version, about = "Heat flow and residual verification on flat CR and qc nilmanifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Static residual suite at every resolution of the ladder.
    Verify(Run),
    /// Heat flow with the time-differenced identities and monotonicity verdicts.
    Simulate(Run),
    /// Static suite plus closed-form oracles, with an order table.
    Refine(Run),
    /// Print the sign and normalization conventions of a model.
    Conventions {
        #[arg(long, default_value = "cr")]
        model: String,
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Optional grid, e.g. 16x16x32.
        #[arg(long)]
        grid: Option<String>,
    },
}

#[derive(Args)]
struct Run {
    /// TOML suite configuration.
    config: PathBuf,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated ladder, e.g. 16x16x32,32x32x64.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Run {
    fn load(&self) -> nilheat::Result<SuiteConfig> {
        let mut cfg = SuiteConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            model: self.model.clone(),
            n: self.n,
            grid: self.grid.clone(),
            order: self.order,
            t_final: self.t_final,
            seed: self.seed,
            out: self.out.clone(),
        })?;
        Ok(cfg)
    }
}

fn print_summary(report: &SuiteReport) {
    for (name, s) in &report.summary {
        let order = s.order.map(|o| format!("{o:.2}")).unwrap_or_else(|| "-".into());
        println!("{:<34} {:<12} abs {:<11.3e} rel {:<11.3e} order {order}", name, format!("{:?}", s.status).to_lowercase(), s.abs, s.rel);
        if let Some(e) = &s.error {
            println!("    error: {e}");
        }
    }
}

fn run(cli: Cli) -> nilheat::Result<bool> {
    match cli.command {
        Command::Verify(r) => {
            let cfg = r.load()?;
            let report = harness::verify(&cfg)?;
            report.write_files(&cfg.out, "verify")?;
            print_summary(&report);
            Ok(report.passed())
        }
        Command::Refine(r) => {
            let cfg = r.load()?;
            let report = harness::refine(&cfg)?;
            report.write_files(&cfg.out, "refine")?;
            report.write_order_table(std::fs::File::create(cfg.out.join("refine_orders.csv"))?)?;
            print_summary(&report);
            Ok(report.passed())
        }
        Command::Simulate(r) => {
            let cfg = r.load()?;
            let sim = harness::simulate(&cfg)?;
            sim.write_files(&cfg.out)?;
            for (g, c) in sim.grids.iter().zip(&sim.checks) {
                println!("{g}: monotone {:?}, min paneitz ratio {:.3e}", c.monotone, c.min_paneitz_ratio);
            }
            print_summary(&sim.report);
            Ok(sim.passed())
        }
        Command::Conventions { model, n, grid } => {
            let kind = ModelKind::parse(&model)?;
            match grid {
                Some(g) => {
                    let sizes = parse_grid(&g)?;
                    let (m, _) = build_model(kind, n, &sizes, nilheat::discretization::StencilOrder::Four)?;
                    println!("{}", convention_sheet(&m.geometry, Some(&m.grid)));
                    println!("grid {}", grid_label(&sizes));
                }
                None => println!("{}", convention_sheet(&Geometry::new(kind, n)?, None)),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
