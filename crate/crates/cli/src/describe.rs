//! Text printed by `obstacle-lab describe`.

use std::fmt::Write as _;

use obstacle_lab::blowup::BlowupFit;
use obstacle_lab::diagnostics::CSV_HEADER;
use obstacle_lab::epi::EPI_CSV_HEADER;

use crate::config::{Experiment, SCHEMA_VERSION};
use crate::experiments::classification_csv_header;

fn details(e: Experiment) -> (&'static str, &'static str) {
    match e {
        Experiment::Solve => ("cone, two-mode, perturbed, constant", "solution.field"),
        Experiment::Diagnostics => ("cone, two-mode, perturbed, constant, field-file", "diagnostics.csv"),
        Experiment::Blowup => ("cone, two-mode, perturbed, constant, field-file", "classification.csv, blowup.csv"),
        Experiment::Epiperimetric => ("default-family (default), cone, perturbed, constant", "epiperimetric.csv"),
        Experiment::VerifyOracle => ("cone (default lambda = 1, e = e_1)", "diagnostics.csv"),
    }
}

const PARAMS: &str = "\
[params]
  n       integer   ambient dimension, 2 or 3
  s       float     fractional order in (0, 1)
  h       float     grid spacing, positive
  a       float     weight exponent; optional, must equal 1 - 2s
  r_dom   float     domain radius; optional, default 1
";

const SECTIONS: &str = "\
[datum]
  kind    cone | two-mode | perturbed | constant | field-file | default-family
  lambda  float     cone amplitude (cone)
  e       floats    unit direction in the first n-1 coordinates (cone, two-mode, perturbed)
  angle   float     direction angle in radians, alternative to e
  eps     float     perturbation size (two-mode, perturbed)
  k       integer   angular mode of the perturbation (perturbed)
  value   float     constant value, nonnegative (constant)
  path    string    snapshot written by an earlier run (field-file)
[window]
  center  floats    center of the balls; default is chosen per experiment
  r_min   float     smallest radius
  r_max   float     largest radius
  ratio   float     geometric ratio between radii, default 0.85
[solver]
  omega          float    relaxation factor; default is tuned to the grid
  tol            float    max-update stopping tolerance, default 1e-10
  max_iter       integer  sweep limit, default 200000
  adapt_weights  bool     contact-aware plane weights, default true
  initial        zero | harmonic
[tolerances]
  identity_factor  float  identity residuals must stay below factor * h, default 5
  kkt              float  default 1e-7
  floor_slack      float  default 1e-4
  exact_error      float  default 0.05
  scaling          float  default 1e-10
[epi]
  scaling_factors  floats  default [0.5, 2.0]
[output]
  dir       string  relative to the configuration file, default \"out\"
  snapshot  bool    write solution.field after a solve, default true
";

const JSON_SCHEMA: &str = "\
summary.json
  schema_version  integer
  experiment      string
  label           string
  pass            bool
  error           string | null
  checks          [{name, value, relation (\"<=\" | \">=\" | \">\"), bound, pass}]
  results         object, experiment specific
  artifacts       [string]
  metadata        {timestamp, version, config, threads}
";

pub fn text() -> String {
    let mut out = String::new();
    let _ = writeln!(out, "obstacle-lab {} (schema version {SCHEMA_VERSION})", env!("CARGO_PKG_VERSION"));
    out.push_str("\nusage: obstacle-lab run <config.toml> | obstacle-lab describe\n");
    out.push_str("threads: OBSTACLE_LAB_THREADS caps the worker pool\n");
    out.push_str("exit status: 0 pass, 1 failed check or unconverged solve, 2 configuration error\n\n");
    out.push_str("experiments\n");
    for e in Experiment::ALL {
        let (data, files) = details(e);
        let _ = writeln!(out, "  {:<14} data: {data}; writes: {files}, summary.json", e.as_str());
    }
    out.push_str("  runs that solve also write solution.field unless [output] snapshot = false\n");
    out.push_str("\nconfiguration\n  experiment = <name>\n  label = <string>  optional\n");
    out.push_str(PARAMS);
    out.push_str(SECTIONS);
    out.push_str("\ncsv headers (n = dimension)\n");
    let _ = writeln!(out, "  diagnostics.csv     {CSV_HEADER}");
    let _ = writeln!(out, "  epiperimetric.csv   {EPI_CSV_HEADER}");
    let _ =
        writeln!(out, "  blowup.csv          {}", BlowupFit::csv_header(2).replace("x0_0,x0_1", "x0_0,...,x0_{n-1}"));
    let _ = writeln!(
        out,
        "  classification.csv  {}",
        classification_csv_header(2).replace("x0_0,x0_1", "x0_0,...,x0_{n-1}")
    );
    out.push('\n');
    out.push_str(JSON_SCHEMA);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_every_experiment_and_parameter() {
        let t = text();
        for e in Experiment::ALL {
            assert!(t.contains(e.as_str()), "{}", e.as_str());
        }
        for p in ["  n ", "  s ", "  a ", "  h ", "  r_dom "] {
            assert!(t.contains(p), "{p}");
        }
        assert!(t.contains(CSV_HEADER) && t.contains(EPI_CSV_HEADER));
        assert!(t.contains("schema version 1"));
    }
}
