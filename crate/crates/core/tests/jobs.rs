mod common;

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use proptest::prelude::*;
use serde_json::Value;
use structa_core::engine::{CommandShim, Hyperparams, JobManager, JobState, ShimAction, ShimError, ShimRunner};
use structa_core::labeler::{ensure_training_set, AugmentationConfig, TrainingSet};
use structa_core::llm::Gateway;
use structa_core::model::Provenance;
use structa_core::store::Store;
use structa_core::synth::planted_rules;

use common::planted_store;

const STUB: &str = env!("CARGO_BIN_EXE_stub-trainer");

fn dataset(dir: &Path) -> (Store, TrainingSet) {
    let (store, corpus, docs) = planted_store(dir, 12, 2);
    for d in docs.iter().take(2) {
        store.upsert_label(&corpus, &d.document.doc_id, d.truth.clone(), Provenance::Human, "a").unwrap();
    }
    let set = ensure_training_set(&store, &Gateway::mock(planted_rules()), &corpus, &AugmentationConfig::new(5)).unwrap();
    (store, set)
}

fn manager(store: &Store, extra: &[&str]) -> JobManager {
    let mut argv = vec![STUB.to_string()];
    argv.extend(extra.iter().map(|s| s.to_string()));
    JobManager::open(store.artifact_dir("jobs"), Arc::new(CommandShim::new(argv))).unwrap()
}

fn hp(epochs: u32) -> Hyperparams {
    Hyperparams { epochs, ..Hyperparams::default() }
}

fn states(rec: &structa_core::engine::JobRecord) -> Vec<JobState> {
    rec.history.iter().map(|e| e.state).collect()
}

#[test]
fn trains_to_done_and_writes_protocol_files() {
    let dir = tempfile::tempdir().unwrap();
    let (store, set) = dataset(dir.path());
    let jobs = manager(&store, &[]);
    let job = jobs.submit(&set, hp(4)).unwrap();
    assert_eq!(job.state, JobState::Queued);
    let job = jobs.run(&job.job_id).unwrap();
    assert_eq!(job.state, JobState::Done);
    assert_eq!(states(&job), [JobState::Queued, JobState::Running, JobState::Done]);
    assert_eq!(job.loss.len(), 4);
    assert!(job.checkpoint_path.as_ref().unwrap().is_dir());

    let jd = jobs.job_dir(&job.job_id);
    let config: Value = serde_json::from_str(&fs::read_to_string(jd.join("config.json")).unwrap()).unwrap();
    let keys: Vec<&str> = config.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["batch_size", "lr", "epochs", "adapter_rank", "seed", "base_model"]);
    assert_eq!(config["lr"], 4e-4);
    assert_eq!(fs::read(jd.join("train.jsonl")).unwrap(), fs::read(set.train_path()).unwrap());
    let status: Value = serde_json::from_str(&fs::read_to_string(jd.join("status.json")).unwrap()).unwrap();
    assert_eq!(status["state"], "done");

    let view = jobs.status(&job.job_id).unwrap();
    assert_eq!((view.progress.done, view.progress.total), (4, 4));
    assert!(jobs.run(&job.job_id).is_err());
}

#[test]
fn divergence_is_retried_once_at_the_fallback_lr() {
    let dir = tempfile::tempdir().unwrap();
    let (store, set) = dataset(dir.path());
    let jobs = manager(&store, &["--diverge-above-lr", "3.5e-4"]);
    let job = jobs.run(&jobs.submit(&set, hp(3)).unwrap().job_id).unwrap();
    assert_eq!(job.state, JobState::Done);
    assert_eq!(job.attempt, 2);
    assert_eq!(job.lr, 3e-4);
    use JobState::*;
    assert_eq!(states(&job), [Queued, Running, Retrying, Running, Done]);
    assert_eq!(job.history[2].lr, 4e-4);
    assert_eq!(job.history[3].lr, 3e-4);
    let config: Value =
        serde_json::from_str(&fs::read_to_string(jobs.job_dir(&job.job_id).join("config.json")).unwrap()).unwrap();
    assert_eq!(config["lr"], 3e-4);
}

#[test]
fn second_divergence_is_terminal() {
    let dir = tempfile::tempdir().unwrap();
    let (store, set) = dataset(dir.path());
    let jobs = manager(&store, &["--always-diverge"]);
    let job = jobs.run(&jobs.submit(&set, hp(5)).unwrap().job_id).unwrap();
    assert_eq!(job.state, JobState::FailedDiverged);
    assert_eq!(job.attempt, 2);
    assert!(job.checkpoint_path.is_none());
    // the diverged epoch's loss travels as null
    assert_eq!(job.loss.last(), Some(&None));
    let raw = fs::read_to_string(jobs.job_dir(&job.job_id).join("status.json")).unwrap();
    assert!(raw.contains("null"));
}

#[test]
fn trainer_failure_and_missing_trainer() {
    let dir = tempfile::tempdir().unwrap();
    let (store, set) = dataset(dir.path());
    let jobs = manager(&store, &["--always-fail"]);
    let job = jobs.run(&jobs.submit(&set, hp(2)).unwrap().job_id).unwrap();
    assert_eq!(job.state, JobState::Failed);

    let missing = JobManager::open(
        store.artifact_dir("jobs"),
        Arc::new(CommandShim::new(vec!["/nonexistent/trainer-shim".into()])),
    )
    .unwrap();
    let job = missing.run(&missing.submit(&set, hp(2)).unwrap().job_id).unwrap();
    assert_eq!(job.state, JobState::Failed);
    assert_eq!(states(&job), [JobState::Queued, JobState::Failed]);
    assert!(job.message.unwrap().contains("trainer-shim"));
}

#[test]
fn progress_is_monotone_while_polling() {
    let dir = tempfile::tempdir().unwrap();
    let (store, set) = dataset(dir.path());
    let jobs = Arc::new(manager(&store, &["--diverge-above-lr", "3.5e-4", "--epoch-delay-ms", "25"]));
    let id = jobs.submit(&set, hp(6)).unwrap().job_id;
    let runner = {
        let (jobs, id) = (jobs.clone(), id.clone());
        std::thread::spawn(move || jobs.run(&id).unwrap())
    };
    let mut last = 0;
    let mut seen = 0;
    loop {
        let view = jobs.status(&id).unwrap();
        assert!(view.progress.done >= last, "{} < {last}", view.progress.done);
        assert!(view.progress.done <= view.progress.total);
        last = view.progress.done;
        seen += 1;
        if view.state.is_terminal() {
            break;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    assert_eq!(runner.join().unwrap().state, JobState::Done);
    assert!(seen > 3);
}

#[test]
fn restart_fails_interrupted_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let (store, set) = dataset(dir.path());
    let jobs = manager(&store, &[]);
    let job = jobs.submit(&set, hp(2)).unwrap();
    let path = jobs.job_dir(&job.job_id).join("job.json");
    let mut rec: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    rec["state"] = "running".into();
    rec["attempt"] = 1.into();
    fs::write(&path, serde_json::to_vec(&rec).unwrap()).unwrap();
    drop(jobs);
    let jobs = manager(&store, &[]);
    let rec = jobs.job(&job.job_id).unwrap();
    assert_eq!(rec.state, JobState::Failed);
    assert!(rec.message.unwrap().contains("restart"));
}

#[test]
fn inference_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (store, set) = dataset(dir.path());
    let jobs = manager(&store, &[]);
    let queued = jobs.submit(&set, hp(1)).unwrap();
    let rows = vec![structa_core::engine::InferRow { doc_id: "x".into(), input: "hello".into() }];
    assert!(jobs.infer(&queued.job_id, &rows).is_err());
    jobs.run(&queued.job_id).unwrap();
    let train = set.rows().unwrap();
    let rows: Vec<_> = train
        .iter()
        .map(|r| structa_core::engine::InferRow { doc_id: r.doc_id.clone(), input: r.input.clone() })
        .collect();
    let preds = jobs.infer(&queued.job_id, &rows).unwrap();
    assert_eq!(preds.len(), train.len());
    for (p, t) in preds.iter().zip(&train) {
        assert_eq!((&p.doc_id, &p.target), (&t.doc_id, &t.target));
    }
}

/// Plays back a scripted sequence of trainer outcomes.
struct Scripted {
    outcomes: Mutex<VecDeque<u8>>,
}

impl ShimRunner for Scripted {
    fn run(&self, _: ShimAction, dir: &Path) -> Result<(), ShimError> {
        let next = self.outcomes.lock().unwrap().pop_front().unwrap_or(0);
        let status = |state: &str| {
            let body = format!(r#"{{"state":"{state}","epoch":1,"loss":[1.0]}}"#);
            fs::write(dir.join("status.json"), body).unwrap();
        };
        match next {
            0 => {
                fs::create_dir_all(dir.join("checkpoint")).unwrap();
                status("done");
                Ok(())
            }
            1 => {
                status("diverged");
                Ok(())
            }
            2 => {
                status("failed");
                Ok(())
            }
            3 => Err(ShimError::Failed("crashed".into())),
            4 => {
                status("done");
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_history_follows_the_state_machine(script in prop::collection::vec(0u8..6, 1..4)) {
        let dir = tempfile::tempdir().unwrap();
        let (store, set) = dataset(dir.path());
        let runner = Arc::new(Scripted { outcomes: Mutex::new(script.iter().copied().collect()) });
        let jobs = JobManager::open(store.artifact_dir("jobs"), runner).unwrap();
        let job = jobs.run(&jobs.submit(&set, hp(1)).unwrap().job_id).unwrap();
        prop_assert!(job.state.is_terminal());
        prop_assert!(job.attempt <= 2);
        let mut attempt = 0;
        for w in job.history.windows(2) {
            if w[1].state == JobState::Running {
                attempt += 1;
            }
            prop_assert!(w[0].state.allows(w[1].state, attempt), "{:?} -> {:?}", w[0].state, w[1].state);
        }
        prop_assert_eq!(job.state == JobState::Done, job.checkpoint_path.is_some());
        let expect = match (script[0], script.get(1).copied().unwrap_or(0)) {
            (0, _) => JobState::Done,
            (1, 0) => JobState::Done,
            (1, 1) => JobState::FailedDiverged,
            _ => JobState::Failed,
        };
        prop_assert_eq!(job.state, expect);
    }

    #[test]
    fn terminal_states_have_no_exits(a in 0usize..6, b in 0usize..6, attempt in 0u32..4) {
        use JobState::*;
        let all = [Queued, Running, Retrying, Done, Failed, FailedDiverged];
        if all[a].is_terminal() {
            prop_assert!(!all[a].allows(all[b], attempt));
        }
    }
}
