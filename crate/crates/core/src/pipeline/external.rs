//! Subprocess invocation and wall-clock timing of external tools.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::config::ExternalToolSpec;
use crate::error::{Error, Result};

/// Values substituted into a tool's command template.
#[derive(Debug, Clone, Default)]
pub struct ToolBindings {
    pub input: Option<PathBuf>,
    pub inputs_4mod: Option<[PathBuf; 4]>,
    pub output: PathBuf,
    /// Where stdout/stderr are captured; discarded when `None`.
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolOutcome {
    pub exit_code: i32,
    pub wall_time_s: f64,
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Splits the template into argv and substitutes placeholders.
pub fn bind_command(template: &str, b: &ToolBindings) -> Result<Vec<String>> {
    let tokens = shell_words::split(template).map_err(|e| Error::Config(format!("bad command template: {e}")))?;
    if tokens.is_empty() {
        return Err(Error::Config("empty command template".into()));
    }
    let missing = |name: &str| Error::Config(format!("placeholder {{{name}}} is not bound"));
    let mut argv = Vec::with_capacity(tokens.len() + 3);
    for tok in tokens {
        if tok == "{inputs_4mod}" {
            let four = b.inputs_4mod.as_ref().ok_or_else(|| missing("inputs_4mod"))?;
            argv.extend(four.iter().map(|p| path_str(p)));
            continue;
        }
        let mut s = tok;
        if s.contains("{inputs_4mod}") {
            let four = b.inputs_4mod.as_ref().ok_or_else(|| missing("inputs_4mod"))?;
            let joined = four.iter().map(|p| path_str(p)).collect::<Vec<_>>().join(" ");
            s = s.replace("{inputs_4mod}", &joined);
        }
        if s.contains("{input}") {
            let input = b.input.as_ref().ok_or_else(|| missing("input"))?;
            s = s.replace("{input}", &path_str(input));
        }
        s = s.replace("{output}", &path_str(&b.output));
        argv.push(s);
    }
    Ok(argv)
}

/// Runs the tool and measures spawn-to-exit wall time on a monotonic clock.
///
/// A non-zero exit is returned as an outcome (the caller decides how to
/// fail); a zero exit without the declared output is a contract error, and
/// exceeding `timeout_s` kills the process.
pub fn time_external(tool: &ExternalToolSpec, bindings: &ToolBindings) -> Result<ToolOutcome> {
    let argv = bind_command(&tool.command, bindings)?;
    let (stdout, stderr) = match &bindings.log_dir {
        Some(dir) => {
            let out = File::create(dir.join(format!("{}.stdout.log", tool.name))).map_err(Error::io_at(dir))?;
            let err = File::create(dir.join(format!("{}.stderr.log", tool.name))).map_err(Error::io_at(dir))?;
            (Stdio::from(out), Stdio::from(err))
        }
        None => (Stdio::null(), Stdio::null()),
    };
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..]).stdin(Stdio::null()).stdout(stdout).stderr(stderr);

    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| Error::StageFailure {
        stage: tool.name.clone(),
        reason: format!("could not start `{}`: {e}", argv[0]),
        exit_code: None,
        wall_time_s: None,
    })?;
    let status = child.wait_timeout(Duration::from_secs_f64(tool.timeout_s))?;
    let status = match status {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::Timeout { command: argv.join(" "), timeout_s: tool.timeout_s });
        }
    };
    let wall_time_s = start.elapsed().as_secs_f64();
    let exit_code = status.code().unwrap_or(-1);
    if exit_code == 0 && !bindings.output.exists() {
        return Err(Error::ToolContract(bindings.output.clone()));
    }
    Ok(ToolOutcome { exit_code, wall_time_s })
}
