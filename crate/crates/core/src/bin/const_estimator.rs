//! Reference external estimator: predicts a constant.
//!
//! Useful for exercising the subprocess protocol. `--crash-on-fit` makes the
//! process die with exit code 3 after receiving the training data.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(about = "Constant-predictor estimator speaking the dosebench subprocess protocol")]
struct Args {
    /// Value returned for every query.
    #[arg(long, default_value_t = 0.0)]
    value: f64,
    /// Predict the mean training outcome instead of `--value`.
    #[arg(long)]
    mean: bool,
    /// Exit with code 3 in the middle of `fit`.
    #[arg(long)]
    crash_on_fit: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut value = args.value;
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { return ExitCode::from(1) };
        if line.trim().is_empty() {
            continue;
        }
        let msg: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                let _ = writeln!(out, "{}", json!({ "ok": false, "error": format!("bad message: {e}") }));
                continue;
            }
        };
        let reply = match msg["cmd"].as_str() {
            Some("hello") => json!({ "ok": true, "name": "const" }),
            Some("fit") => {
                if args.crash_on_fit {
                    eprintln!("const estimator: crashing during fit as requested");
                    std::process::exit(3);
                }
                if args.mean {
                    let ys: Vec<f64> = msg["train"]["y"].as_array().into_iter().flatten().filter_map(Value::as_f64).collect();
                    if !ys.is_empty() {
                        value = ys.iter().sum::<f64>() / ys.len() as f64;
                    }
                }
                json!({ "ok": true })
            }
            Some("predict") => {
                let n = msg["d"].as_array().map_or(0, Vec::len);
                json!({ "ok": true, "y": vec![value; n] })
            }
            Some("shutdown") => return ExitCode::SUCCESS,
            other => json!({ "ok": false, "error": format!("unknown command {other:?}") }),
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            return ExitCode::from(1);
        }
    }
    ExitCode::SUCCESS
}
