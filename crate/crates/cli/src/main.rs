//! `mdsrob` — encode/decode device-name frames and run piconet simulations.
//!
//! Exit codes: 0 success, 2 usage, 3 frame over the name limit, 4 codebook
//! error, 5 key error, 6 input is not a frame, 7 malformed frame, 8 invalid
//! scenario or run directory. Diagnostics go to stderr, data to stdout.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use mdsrob::codec::{
    decode_frame, encode_frame, load_keyring, Cipher, Codebook, DecodeError, DecodeOutcome,
    EncodeError, PlainMessage, TYPE_ENCRYPTED, TYPE_PLAIN,
};
use mdsrob::sim::{self, RunReport, Scenario};

const EXIT_USAGE: u8 = 2;
const EXIT_TOO_LONG: u8 = 3;
const EXIT_CODEBOOK: u8 = 4;
const EXIT_KEY: u8 = 5;
const EXIT_NOT_A_FRAME: u8 = 6;
const EXIT_MALFORMED: u8 = 7;
const EXIT_SCENARIO: u8 = 8;

#[derive(Parser)]
#[command(
    name = "mdsrob",
    version,
    about = "Message dissemination over Bluetooth device names"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode a message into a device-name frame (body on stdin).
    Encode {
        /// Message id.
        #[arg(long)]
        id: String,
        /// Frame type: 0 plain, 1 encrypted.
        #[arg(long = "type", value_name = "TYPE", default_value_t = '0')]
        type_code: char,
        /// Codebook: a file path, or "default" for the built-in table.
        /// Omitted means no substitution.
        #[arg(long)]
        codebook: Option<String>,
        /// Keyring file (key_id<TAB>secret per line).
        #[arg(long)]
        keyring: Option<PathBuf>,
        /// Key id from the keyring to encrypt with (type 1).
        #[arg(long)]
        key: Option<String>,
        /// Keep a trailing newline of stdin as message content.
        #[arg(long)]
        keep_trailing_newline: bool,
    },
    /// Decode a frame (on stdin) back to its id and body.
    Decode {
        /// Codebook: a file path, or "default" for the built-in table.
        #[arg(long)]
        codebook: Option<String>,
        /// Keyring file for type-'1' frames.
        #[arg(long)]
        keyring: Option<PathBuf>,
    },
    /// Validate a codebook file.
    CodebookCheck {
        /// Codebook file to check.
        path: PathBuf,
    },
    /// Run a scenario and write its report and logs.
    Simulate {
        /// Scenario file (JSON, schema 1).
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a previous simulation run.
    Report {
        /// Run directory written by `simulate`.
        #[arg(long)]
        run: PathBuf,
        /// Print the delivery matrix as CSV instead of the summary.
        #[arg(long)]
        csv: bool,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail<T>(code: u8, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure {
        code,
        message: message.into(),
    })
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Encode {
            id,
            type_code,
            codebook,
            keyring,
            key,
            keep_trailing_newline,
        } => encode(id, type_code, codebook, keyring, key, keep_trailing_newline),
        Cmd::Decode { codebook, keyring } => decode(codebook, keyring),
        Cmd::CodebookCheck { path } => codebook_check(&path),
        Cmd::Simulate { scenario, out } => simulate(&scenario, &out),
        Cmd::Report { run, csv } => report(&run, csv),
    }
}

fn resolve_codebook(flag: Option<&str>) -> Result<Codebook, Failure> {
    match flag {
        None => Ok(Codebook::empty()),
        Some("default") => Ok(Codebook::default_table().clone()),
        Some(path) => Codebook::load(path).map_err(|e| Failure {
            code: EXIT_CODEBOOK,
            message: e.to_string(),
        }),
    }
}

fn resolve_keyring(path: Option<&Path>) -> Result<Vec<Arc<dyn Cipher>>, Failure> {
    match path {
        None => Ok(Vec::new()),
        Some(path) => load_keyring(path).map_err(|e| Failure {
            code: EXIT_KEY,
            message: e.to_string(),
        }),
    }
}

fn read_stdin_text(what: &str) -> Result<String, Failure> {
    let mut buf = Vec::new();
    if let Err(e) = std::io::stdin().read_to_end(&mut buf) {
        return fail(EXIT_USAGE, format!("cannot read {what} from stdin: {e}"));
    }
    String::from_utf8(buf).or_else(|_| fail(EXIT_USAGE, format!("{what} must be valid UTF-8")))
}

fn encode(
    id: String,
    type_code: char,
    codebook: Option<String>,
    keyring: Option<PathBuf>,
    key: Option<String>,
    keep_trailing_newline: bool,
) -> Result<(), Failure> {
    if type_code != TYPE_PLAIN && type_code != TYPE_ENCRYPTED {
        return fail(
            EXIT_USAGE,
            format!("unknown frame type {type_code:?} (use 0 or 1)"),
        );
    }
    if type_code == TYPE_ENCRYPTED && key.is_none() {
        return fail(EXIT_USAGE, "--type 1 requires --key and --keyring");
    }
    if type_code == TYPE_PLAIN && key.is_some() {
        return fail(EXIT_USAGE, "--key is only meaningful with --type 1");
    }
    let cb = resolve_codebook(codebook.as_deref())?;
    let ring = resolve_keyring(keyring.as_deref())?;
    let cipher: Option<&dyn Cipher> = match &key {
        Some(key_id) => Some(
            ring.iter()
                .find(|c| c.key_id() == key_id.as_str())
                .map(|c| &**c)
                .ok_or(())
                .or_else(|_| fail(EXIT_KEY, format!("no key {key_id:?} in the keyring")))?,
        ),
        None => None,
    };

    let mut body = read_stdin_text("message body")?;
    if !keep_trailing_newline && body.ends_with('\n') {
        body.pop();
        if body.ends_with('\r') {
            body.pop();
        }
    }

    let msg = PlainMessage::new(id, body).or_else(|e| fail(EXIT_USAGE, e.to_string()))?;
    match encode_frame(&msg, type_code, &cb, cipher) {
        Ok(frame) => {
            println!("{frame}");
            Ok(())
        }
        Err(err @ EncodeError::FrameTooLong { .. }) => fail(EXIT_TOO_LONG, err.to_string()),
        Err(EncodeError::MissingCipher) => {
            fail(EXIT_USAGE, "--type 1 requires --key and --keyring")
        }
        Err(err) => fail(EXIT_USAGE, err.to_string()),
    }
}

fn decode(codebook: Option<String>, keyring: Option<PathBuf>) -> Result<(), Failure> {
    let cb = resolve_codebook(codebook.as_deref())?;
    let ring = resolve_keyring(keyring.as_deref())?;
    let mut name = read_stdin_text("frame")?;
    if name.ends_with('\n') {
        name.pop();
        if name.ends_with('\r') {
            name.pop();
        }
    }
    match decode_frame(&name, &cb, &ring) {
        Ok(DecodeOutcome::Message(msg)) => {
            println!("{}", msg.id());
            println!("{}", msg.body());
            Ok(())
        }
        Ok(DecodeOutcome::NotAFrame) => fail(EXIT_NOT_A_FRAME, "input is not a frame"),
        Err(DecodeError::Undecryptable) => {
            fail(EXIT_KEY, "no key in the keyring decrypts this frame")
        }
        Err(err) => fail(EXIT_MALFORMED, err.to_string()),
    }
}

fn codebook_check(path: &Path) -> Result<(), Failure> {
    match Codebook::load(path) {
        Ok(cb) => {
            println!("ok: {} entries", cb.len());
            Ok(())
        }
        Err(e) => fail(EXIT_CODEBOOK, e.to_string()),
    }
}

fn simulate(scenario_path: &Path, out_dir: &Path) -> Result<(), Failure> {
    let scenario = Scenario::load(scenario_path).or_else(|e| fail(EXIT_SCENARIO, e.to_string()))?;
    let output = sim::run(&scenario).or_else(|e| fail(EXIT_SCENARIO, e.to_string()))?;

    let io_err = |e: std::io::Error| Failure {
        code: 1,
        message: format!("cannot write run output: {e}"),
    };
    std::fs::create_dir_all(out_dir.join("stores")).map_err(io_err)?;
    let report_json =
        serde_json::to_string_pretty(&output.report).expect("report serializes") + "\n";
    write_atomic(&out_dir.join("report.json"), report_json.as_bytes()).map_err(io_err)?;
    write_atomic(
        &out_dir.join("delivery.csv"),
        output.report.delivery_csv().as_bytes(),
    )
    .map_err(io_err)?;
    write_atomic(&out_dir.join("events.log"), output.event_log.as_bytes()).map_err(io_err)?;
    for (node, log) in &output.store_logs {
        write_atomic(
            &out_dir.join("stores").join(format!("{node}.log")),
            log.as_bytes(),
        )
        .map_err(io_err)?;
    }

    println!("{}", output.report.summary_line());
    Ok(())
}

fn write_atomic(path: &Path, data: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, data)?;
    std::fs::rename(&tmp, path)
}

fn report(run_dir: &Path, csv: bool) -> Result<(), Failure> {
    let path = run_dir.join("report.json");
    let raw = std::fs::read_to_string(&path).or_else(|e| {
        fail(
            EXIT_SCENARIO,
            format!("cannot read {}: {e}", path.display()),
        )
    })?;
    let report: RunReport =
        serde_json::from_str(&raw).or_else(|e| fail(EXIT_SCENARIO, format!("bad report: {e}")))?;

    if csv {
        print!("{}", report.delivery_csv());
        return Ok(());
    }
    println!("{}", report.summary_line());
    for msg in &report.messages {
        let cells: Vec<String> = report
            .nodes
            .iter()
            .map(|node| match report.first_seen(&msg.id, node) {
                Some(tick) => format!("{node}={tick}"),
                None => format!("{node}=never"),
            })
            .collect();
        println!(
            "message {} (origin {}, tick {}): {}",
            msg.id,
            msg.origin,
            msg.originated_at,
            cells.join(" ")
        );
    }
    Ok(())
}
