use std::process::Command;

use flowgraft::bpmn::check_document;

use crate::support::{ensure, fixtures, must, Verdict};

/// Each defective fixture with the exact multiset of codes it must produce.
const DEFECTIVE: &[(&str, &[&str])] = &[
    ("unreachable_task", &["UNREACHABLE_NODE"; 3]),
    ("unreachable_island", &["UNREACHABLE_NODE"; 4]),
    ("parallel_cycle", &["NON_TERMINATING_CYCLE"]),
    ("task_cycle", &["NON_TERMINATING_CYCLE", "UNREACHABLE_NODE"]),
    ("duplicate_ids", &["DUPLICATE_ID"]),
    ("dangling_target", &["DANGLING_REF"]),
    ("dangling_source", &["DANGLING_REF"]),
    // Without a start (or end) some node necessarily lacks an incoming
    // (or outgoing) flow, which is itself reported.
    ("no_start", &["BAD_GATEWAY_SHAPE", "NO_START"]),
    ("no_end", &["BAD_GATEWAY_SHAPE", "NO_END"]),
    ("multiple_start", &["MULTIPLE_START"]),
    ("name_mismatch", &["NAME_MISMATCH"]),
    ("condition_on_task_exit", &["BAD_CONDITION"]),
];

fn validate_exit(path: &std::path::Path) -> Result<(i32, String), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_flowgraft"))
        .arg("validate")
        .arg(path)
        .output()
        .map_err(|e| e.to_string())?;
    Ok((out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned()))
}

pub async fn run() -> Verdict {
    let root = fixtures();
    for (name, expected) in DEFECTIVE {
        let path = root.join("defective").join(format!("{name}.bpmn"));
        let report = must!(check_document(&must!(std::fs::read(&path)), None));
        let mut got: Vec<&str> = report.diagnostics().iter().map(|d| d.code.as_str()).collect();
        got.sort_unstable();
        let mut want = expected.to_vec();
        want.sort_unstable();
        ensure!(got == want, "{name}: codes {got:?}, expected {want:?}");
        let (code, stdout) = validate_exit(&path)?;
        ensure!(code == 2, "{name}: validate exited {code}");
        ensure!(stdout.lines().count() == want.len(), "{name}: printed {stdout:?}");
    }
    let mut clean = 0;
    for entry in must!(std::fs::read_dir(root.join("clean"))) {
        let path = must!(entry).path();
        let report = must!(check_document(&must!(std::fs::read(&path)), None));
        ensure!(
            report.diagnostics().is_empty(),
            "{}: {:?}",
            path.display(),
            report.diagnostics()
        );
        let (code, stdout) = validate_exit(&path)?;
        ensure!(code == 0 && stdout.is_empty(), "{}: validate exited {code} with {stdout:?}", path.display());
        clean += 1;
    }
    ensure!(clean >= 10, "only {clean} clean fixtures");
    Ok(format!(
        "{} defective fixtures yield exactly their codes; {clean} clean fixtures yield none",
        DEFECTIVE.len()
    ))
}
