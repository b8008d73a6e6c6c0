//! Command-line driver: training, evaluation, reconstruction, posterior
//! export and small hyperparameter grids over the `ibner` library.

pub mod args;
pub mod commands;
pub mod error;
pub mod run_config;

use args::{Cli, Command};
pub use error::{CliError, Result};

/// Runs one subcommand and prints its summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let run = a.resolve()?;
            let s = commands::train(&run)?;
            println!(
                "trained {} -> {} (best dev F1 {:.4} at epoch {}, final {:.4})",
                run.model.mode,
                s.out.display(),
                s.best_dev_f1,
                s.best_epoch,
                s.final_dev_f1
            );
        }
        Command::Eval(a) => {
            let r = commands::eval(&a)?;
            let m = &r.evaluation.report.micro;
            println!(
                "P={:.4} R={:.4} F1={:.4} (tp={} fp={} fn={})",
                m.precision, m.recall, m.f1, m.true_positives, m.false_positives, m.false_negatives
            );
            for (t, c) in &r.evaluation.report.per_type {
                println!(
                    "  {t}: P={:.4} R={:.4} F1={:.4}",
                    c.precision, c.recall, c.f1
                );
            }
            let e = &r.evaluation.errors;
            println!(
                "category errors {}, span errors {}",
                e.category_errors, e.span_errors
            );
            if let Some(b) = r.bleu2 {
                println!("reconstruction BLEU-2 {b:.4}");
            }
        }
        Command::Reconstruct(a) => {
            let r = commands::reconstruct(&a)?;
            println!("{} entities, mean BLEU-2 {:.4}", r.rows.len(), r.mean_bleu2);
        }
        Command::ExportPosteriors(a) => {
            let (path, rows, width) = commands::export(&a)?;
            println!("{} rows x {} -> {}", rows, width, path.display());
        }
        Command::Grid(a) => {
            let cells = commands::grid(&a)?;
            print!("{}", commands::grid_table(&cells));
        }
        Command::Synth(a) => {
            let (c, d) = commands::synth(&a)?;
            println!("{}\n{}", c.display(), d.display());
        }
    }
    Ok(())
}
