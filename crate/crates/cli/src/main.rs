use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gov_core::attestation::{Attestation, FieldType, Revocation, Schema};
use gov_core::codec::{encode_lines, Value};
use gov_core::delegation::{resolve, Constraints, DelegationRecord, ProposalRef, Scope};
use gov_core::pipeline::run_pipeline;
use gov_core::policy::{evaluate_epoch, parse_policy, shadow_diff, ActionPlan, PlannedAction, Policy, WorldState};
use gov_core::sim::{run_scenario, Scenario, SettlementStatus};
use gov_core::store::{run_case_study, verify_bundle, AuditBundle, CaseStudy, JournalEntry, StoreError, Workspace};
use gov_core::trust::{compute_trust_scores, TrustConfig};
use gov_core::{workload, Canonical, Digest, Fixed, IdentityId, Keypair};

const EXIT_VALIDATION: u8 = 2;
const EXIT_QUORUM: u8 = 3;
const EXIT_PAUSED: u8 = 4;

#[derive(Parser)]
#[command(name = "gov", version, about = "Deterministic governance engine")]
struct Cli {
    /// Workspace directory.
    #[arg(long, global = true, default_value = ".gov")]
    workspace: PathBuf,
    /// Seed for generated workloads.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Hex of canonical bytes, one record per line.
    Canonical,
    Human,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create an empty workspace.
    Init,
    /// Register an attestation schema.
    Schema {
        id: String,
        #[arg(long)]
        revocable: bool,
        /// name:type, type one of str, int, fixed, bool, bytes, identity.
        #[arg(long = "field")]
        fields: Vec<String>,
    },
    /// Issue an attestation signed by the key derived from `--key`.
    Attest {
        #[arg(long)]
        key: String,
        #[arg(long)]
        schema: String,
        /// Key label or 64-hex identity.
        #[arg(long)]
        subject: String,
        #[arg(long, default_value = "1")]
        confidence: Fixed,
        #[arg(long)]
        at: u64,
        #[arg(long)]
        expires: Option<u64>,
        /// name=value string payload fields.
        #[arg(long = "field")]
        fields: Vec<String>,
    },
    Revoke {
        #[arg(long)]
        key: String,
        #[arg(long)]
        uid: Digest,
        #[arg(long)]
        at: u64,
    },
    /// Record a token balance.
    Balance {
        identity: String,
        amount: Fixed,
        #[arg(long)]
        at: u64,
    },
    /// Seal the store at `--at` and record the snapshot.
    Snapshot {
        #[arg(long)]
        at: u64,
    },
    /// Trust scores over the latest snapshot.
    Trust {
        /// Seed identities (key label or hex).
        #[arg(long = "trusted", required = true)]
        trusted: Vec<String>,
    },
    /// Delegated voting weights over the latest snapshot.
    Resolve {
        #[arg(long = "trusted", required = true)]
        trusted: Vec<String>,
        /// FROM=TO key labels; FROM signs.
        #[arg(long = "delegate")]
        delegations: Vec<String>,
        #[arg(long, default_value = "P0001")]
        proposal: String,
        #[arg(long, default_value = "general")]
        topic: String,
    },
    /// Run the four-stage pipeline over a generated workload.
    Pipeline {
        #[arg(long, default_value_t = 20)]
        proposals: usize,
        #[arg(long, default_value_t = 100)]
        evaluations: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    Policy {
        #[command(subcommand)]
        cmd: PolicyCmd,
    },
    /// Collection, pipeline, simulated settlement and policy execution in
    /// one run; writes an audit bundle.
    CaseStudy {
        /// Scenario JSON; the shipped demo when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Bundle directory; defaults to runs/<seal> inside the workspace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute every digest in an audit bundle.
    Verify { bundle: PathBuf },
}

#[derive(Subcommand)]
enum SimCmd {
    Run { scenario: PathBuf },
}

#[derive(Subcommand)]
enum PolicyCmd {
    Check { files: Vec<PathBuf> },
    /// Evaluate policies for one epoch.
    Eval {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// WorldState JSON.
        #[arg(long)]
        world: PathBuf,
        #[arg(long = "paused")]
        paused: Vec<String>,
    },
    /// Plans the candidate set would emit that the active set would not, and
    /// vice versa. Nothing is executed.
    ShadowDiff {
        #[arg(long, required = true)]
        active: Vec<PathBuf>,
        #[arg(long, required = true)]
        candidate: Vec<PathBuf>,
        #[arg(long)]
        world: PathBuf,
    },
}

struct Fail {
    code: u8,
    message: String,
}

impl Fail {
    fn validation(message: impl Into<String>) -> Self {
        Fail {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<StoreError> for Fail {
    fn from(e: StoreError) -> Self {
        let code = if matches!(e, StoreError::Io(_)) { 1 } else { EXIT_VALIDATION };
        Fail {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid<E: std::fmt::Display>(e: E) -> Fail {
    Fail::validation(e.to_string())
}

/// Key label or 64-hex identity.
fn identity(s: &str) -> IdentityId {
    match Digest::from_hex(s) {
        Ok(d) if s.len() == 64 => IdentityId(d),
        _ => Keypair::from_seed(s).id(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Fail> {
    fs::read(path).map_err(|e| Fail {
        code: 1,
        message: format!("{}: {e}", path.display()),
    })
}

fn load_policies(files: &[PathBuf]) -> Result<Vec<Policy>, Fail> {
    files
        .iter()
        .map(|f| {
            let text = String::from_utf8(read(f)?).map_err(invalid)?;
            Policy::parse(&text).map_err(|e| Fail::validation(format!("{}: {e}", f.display())))
        })
        .collect()
}

fn load_world(path: &Path) -> Result<WorldState, Fail> {
    serde_json::from_slice(&read(path)?).map_err(|e| Fail::validation(format!("{}: {e}", path.display())))
}

fn show_action(a: &PlannedAction) -> String {
    let params: Vec<String> = a.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let mut s = format!("{} {}", a.kind.as_str(), params.join(" "));
    for t in &a.transfers {
        s.push_str(&format!(" [{} -> {}: {}]", t.from, t.to, t.amount));
    }
    s
}

fn show_plan(p: &ActionPlan) -> String {
    let mut s = format!(
        "plan {} policy {} v{} epoch {} window [{}, {})",
        p.plan_id.short(),
        p.policy_id,
        p.policy_version,
        p.epoch,
        p.timelock.0,
        p.timelock.1
    );
    for a in &p.actions {
        s.push_str(&format!("\n  {}", show_action(a)));
    }
    if !p.flags.is_empty() {
        s.push_str(&format!("\n  flags: {}", p.flags.iter().cloned().collect::<Vec<_>>().join(", ")));
    }
    s
}

fn emit<T: Canonical>(format: Format, item: &T, human: impl FnOnce() -> String) {
    match format {
        Format::Canonical => println!("{}", hex::encode(item.canonical_bytes())),
        Format::Human => println!("{}", human()),
    }
}

fn run(cli: Cli) -> Result<(), Fail> {
    let ws_path = cli.workspace.clone();
    let journal = |entry: JournalEntry| -> Result<Option<gov_core::attestation::GraphSnapshot>, Fail> {
        let mut ws = Workspace::open_locked(&ws_path)?;
        Ok(ws.apply(entry)?)
    };
    match cli.cmd {
        Cmd::Init => {
            let ws = Workspace::init(&cli.workspace)?;
            println!("initialised {}", ws.root().display());
        }
        Cmd::Schema { id, revocable, fields } => {
            let mut schema = Schema::new(id, revocable);
            for f in fields {
                let (name, ty) = f.split_once(':').ok_or_else(|| Fail::validation(format!("field {f:?} is not name:type")))?;
                let ty: FieldType = serde_json::from_value(serde_json::Value::String(ty.into())).map_err(invalid)?;
                schema = schema.with_field(name, ty);
            }
            journal(JournalEntry::Schema(schema.clone()))?;
            emit(cli.format, &schema, || format!("registered schema {}", schema.id));
        }
        Cmd::Attest {
            key,
            schema,
            subject,
            confidence,
            at,
            expires,
            fields,
        } => {
            let mut payload = BTreeMap::new();
            for f in fields {
                let (k, v) = f.split_once('=').ok_or_else(|| Fail::validation(format!("field {f:?} is not name=value")))?;
                payload.insert(k.to_string(), Value::str(v));
            }
            let att = Attestation::issue(&Keypair::from_seed(&key), &schema, identity(&subject), confidence, payload, at, expires);
            journal(JournalEntry::Attest(att.clone()))?;
            emit(cli.format, &att, || format!("attestation {}", att.uid()));
        }
        Cmd::Revoke { key, uid, at } => {
            let rev = Revocation::sign(&Keypair::from_seed(&key), uid, at);
            journal(JournalEntry::Revoke(rev.clone()))?;
            emit(cli.format, &rev, || format!("revoked {uid} at {at}"));
        }
        Cmd::Balance { identity: who, amount, at } => {
            let id = identity(&who);
            journal(JournalEntry::Balance { id, amount, at })?;
            println!("{} balance {amount} from {at}", id.short());
        }
        Cmd::Snapshot { at } => {
            let snap = journal(JournalEntry::Snapshot { at })?.expect("snapshot entry yields a snapshot");
            emit(cli.format, &snap, || {
                format!(
                    "snapshot {} at {}: {} identities, {} attestations",
                    snap.digest(),
                    snap.at,
                    snap.identities.len(),
                    snap.attestations.len()
                )
            });
        }
        Cmd::Trust { trusted } => {
            let snap = Workspace::open(&cli.workspace)?.latest_snapshot()?;
            let table = compute_trust_scores(&snap, &TrustConfig::with_seeds(trusted.iter().map(|s| identity(s)))).map_err(invalid)?;
            emit(cli.format, &table, || {
                let mut rows: Vec<_> = table.scaled.iter().collect();
                rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
                let mut out = format!("root {}  iterations {}  converged {}\n", table.root(), table.iterations, table.converged);
                for (id, s) in rows {
                    out.push_str(&format!("{}  {:>8}  {}\n", id.short(), s, table.scores[id]));
                }
                out
            });
        }
        Cmd::Resolve {
            trusted,
            delegations,
            proposal,
            topic,
        } => {
            let snap = Workspace::open(&cli.workspace)?.latest_snapshot()?;
            let trust = compute_trust_scores(&snap, &TrustConfig::with_seeds(trusted.iter().map(|s| identity(s)))).map_err(invalid)?;
            let records = delegations
                .iter()
                .map(|d| {
                    let (from, to) = d.split_once('=').ok_or_else(|| Fail::validation(format!("delegation {d:?} is not FROM=TO")))?;
                    Ok(DelegationRecord::sign(&Keypair::from_seed(from), identity(to), Scope::Global, Constraints::default(), snap.at))
                })
                .collect::<Result<Vec<_>, Fail>>()?;
            let w = resolve(&snap, &records, &ProposalRef { id: proposal, topic }, &trust).map_err(invalid)?;
            emit(cli.format, &w, || {
                let mut out = format!("root {}\n", w.root);
                for (id, v) in w.weights.iter().filter(|(_, v)| !v.is_zero()) {
                    out.push_str(&format!("{}  {v}\n", id.short()));
                }
                for id in &w.forfeited {
                    out.push_str(&format!("{}  forfeited (cycle)\n", id.short()));
                }
                out
            });
        }
        Cmd::Pipeline {
            proposals,
            evaluations,
            threads,
        } => {
            let w = workload::pipeline_workload(cli.seed, proposals, evaluations);
            let run = run_pipeline(&w.population.snapshot, &w.trust, &w.ballots, &w.config, threads).map_err(invalid)?;
            match cli.format {
                Format::Canonical => print!("{}", encode_lines(&run.audit)),
                Format::Human => {
                    for s in &run.audit {
                        println!("{:<9} {} -> {}", s.stage, s.input, s.output);
                    }
                    print!("{}", run.report.to_markdown());
                    println!("root {}", run.report.root);
                }
            }
        }
        Cmd::Sim { cmd: SimCmd::Run { scenario } } => {
            let s: Scenario = serde_json::from_slice(&read(&scenario)?).map_err(invalid)?;
            let report = run_scenario(&s).map_err(invalid)?;
            match cli.format {
                Format::Canonical => print!("{}", encode_lines(&report.outcomes)),
                Format::Human => {
                    for (o, honest) in report.outcomes.iter().zip(&report.honest_roots) {
                        println!(
                            "task {} {} root {} (honest {})",
                            o.task.short(),
                            o.status.as_str(),
                            o.root.map_or("-".into(), |r| r.short()),
                            honest.short()
                        );
                        for (op, amt) in &o.slashed {
                            println!("  slashed {op} {amt}");
                        }
                    }
                    println!("ledger conserved: {}", report.conserved);
                }
            }
            if report.fallback {
                return Err(Fail {
                    code: EXIT_QUORUM,
                    message: "quorum not reached; fallback flag set".into(),
                });
            }
        }
        Cmd::Policy { cmd } => policy(cli.format, cmd)?,
        Cmd::CaseStudy { scenario, out } => {
            let s = match &scenario {
                Some(p) => serde_json::from_slice(&read(p)?).map_err(invalid)?,
                None => CaseStudy::demo(),
            };
            let command: Vec<String> = std::env::args().collect();
            let result = run_case_study(&s, &command)?;
            let seal = String::from_utf8_lossy(result.bundle.get("SEAL").expect("sealed")).trim().to_string();
            let dir = match out {
                Some(d) => d,
                None => cli.workspace.join("runs").join(&seal[..16]),
            };
            result.bundle.write_to(&dir)?;
            if out_is_workspace(&cli.workspace, &dir) {
                let mut ws = Workspace::open_locked(&cli.workspace)?;
                let rel = dir.strip_prefix(&cli.workspace).expect("inside workspace");
                let rel = rel.to_string_lossy().replace('\\', "/");
                ws.append("run", &format!("{rel}/SEAL"), result.bundle.get("SEAL").expect("sealed"))?;
            }
            let report = result.report();
            match cli.format {
                Format::Canonical => println!("{}", hex::encode(report.canonical_bytes())),
                Format::Human => {
                    print!("{}", report.to_markdown());
                    println!("report root {}", report.root);
                    if let Some(o) = result.settlement() {
                        println!("settlement {} root {}", o.status.as_str(), o.root.map_or("-".into(), |r| r.to_string()));
                        for (op, amt) in &o.slashed {
                            println!("  slashed {op} {amt}");
                        }
                    }
                    let executed: usize = result.outputs.epochs.iter().map(|e| e.executions.len()).sum();
                    println!("policy executions {executed}");
                    println!("bundle {} seal {seal}", dir.display());
                }
            }
            if result.settlement().is_some_and(|o| o.status == SettlementStatus::RejectedNoQuorum) {
                return Err(Fail {
                    code: EXIT_QUORUM,
                    message: "report root did not reach quorum".into(),
                });
            }
        }
        Cmd::Verify { bundle } => {
            let b = AuditBundle::read_from(&bundle)?;
            let r = verify_bundle(&b)?;
            match (&r.divergence, cli.format) {
                (None, _) => println!("ok: {} files verified", r.files),
                (Some(d), Format::Human) => println!("FAIL stage {} at {}: {}", d.stage, d.path, d.detail),
                (Some(d), Format::Canonical) => println!("{}", serde_json::to_string(d).expect("serialisable")),
            }
            if !r.ok() {
                return Err(Fail::validation("bundle verification failed"));
            }
        }
    }
    Ok(())
}

fn out_is_workspace(ws: &Path, dir: &Path) -> bool {
    dir.starts_with(ws) && ws.join("manifest.json").exists()
}

fn policy(format: Format, cmd: PolicyCmd) -> Result<(), Fail> {
    match cmd {
        PolicyCmd::Check { files } => {
            let mut failed = false;
            for f in &files {
                match parse_policy(&read(f)?) {
                    Ok(p) => println!("{}: ok ({} v{})", f.display(), p.id, p.version),
                    Err(diags) => {
                        failed = true;
                        for d in diags {
                            println!("{}:{d}", f.display());
                        }
                    }
                }
            }
            if failed {
                return Err(Fail::validation("policy check failed"));
            }
        }
        PolicyCmd::Eval { files, world, paused } => {
            let policies = load_policies(&files)?;
            let world = load_world(&world)?;
            let paused: BTreeSet<String> = paused.into_iter().collect();
            let outcome = evaluate_epoch(&world, &policies, &paused, &Default::default());
            match format {
                Format::Canonical => print!("{}", encode_lines(&outcome.plans)),
                Format::Human => {
                    for p in &outcome.plans {
                        println!("{}", show_plan(p));
                    }
                    for e in &outcome.events {
                        println!("event {} {}: {}", e.kind, e.subject, e.detail);
                    }
                }
            }
            let held = !paused.is_empty() || outcome.events.iter().any(|e| e.kind == "escalation");
            if held {
                return Err(Fail {
                    code: EXIT_PAUSED,
                    message: "one or more policies paused or escalated this epoch".into(),
                });
            }
        }
        PolicyCmd::ShadowDiff { active, candidate, world } => {
            let diff = shadow_diff(&load_world(&world)?, &load_policies(&active)?, &load_policies(&candidate)?, &Default::default());
            if diff.is_empty() {
                println!("no difference");
            }
            for (policy, (a, c)) in &diff.changed {
                let show = |v: &Option<Vec<PlannedAction>>| match v {
                    None => "no plan".to_string(),
                    Some(acts) => acts.iter().map(show_action).collect::<Vec<_>>().join("; "),
                };
                match format {
                    Format::Human => println!("{policy}\n  active:    {}\n  candidate: {}", show(a), show(c)),
                    Format::Canonical => println!(
                        "{}",
                        hex::encode(Value::map([("policy", Value::str(policy)), ("active", a.to_value()), ("candidate", c.to_value())]).encode())
                    ),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gov: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
