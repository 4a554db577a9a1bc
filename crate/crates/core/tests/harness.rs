use std::fs;
use std::path::Path;

use fgsf_core::fim::ScrubTarget;
use fgsf_core::harness::{
    analyze_log, decode, encode, run_training, sweep, Method, RunConfig, RunLog, SweepAxis,
    Trainer, CSV_FILE, CSV_HEADER, MAGIC, RESULT_FILE, SUMMARY_FILE, VERSION,
};
use fgsf_core::pbdetect::{PhaseThresholds, SavGolSpec};
use fgsf_core::Error;

fn small(dir: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.total_env_steps = Some(1000);
    c.sac.warmup_steps = 200;
    c.sac.batch_size = 32;
    c.sac.hidden = vec![16, 16];
    c.log_every = 50;
    c.eval_every = 500;
    c.eval_episodes = 1;
    c.wall_clock = false;
    c.dormant.probe_batch_size = 32;
    c.output_dir = dir.to_path_buf();
    c
}

#[test]
fn smoke_run_writes_schema_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.wall_clock = true;
    let out = run_training(&cfg).unwrap();
    let text = fs::read_to_string(&out.csv_path).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    let log = RunLog::parse(&text).unwrap();
    assert_eq!(log.rows.len(), 16);
    assert!(log.rows.windows(2).all(|w| w[1].wall_ms >= w[0].wall_ms));
    assert!(log.rows.iter().all(|r| r.tr_f_actor > 0.0 && r.tr_f_critic > 0.0));
    assert!(dir.path().join(RESULT_FILE).exists());
    let resolved = RunConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(resolved.total_env_steps, Some(1000));
    assert_eq!(out.result.episodes, 5);
    assert_eq!(out.result.evals.len(), 2);
}

#[test]
fn runs_without_gradient_steps_still_log_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.total_env_steps = Some(100);
    let out = run_training(&cfg).unwrap();
    assert_eq!(out.result.grad_steps, 0);
    assert_eq!(RunLog::read(&out.csv_path).unwrap().rows.len(), 1);
}

#[test]
fn same_seed_gives_identical_log() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = small(a.path());
    ca.method = Method::Fgsf;
    ca.scrub.lambda = 1e-6;
    let mut cb = ca.clone();
    cb.output_dir = b.path().to_path_buf();
    run_training(&ca).unwrap();
    run_training(&cb).unwrap();
    let la = fs::read(a.path().join(CSV_FILE)).unwrap();
    let lb = fs::read(b.path().join(CSV_FILE)).unwrap();
    assert_eq!(la, lb);
}

#[test]
fn zero_lambda_matches_baseline() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let base = small(a.path());
    let mut fgsf = small(b.path());
    fgsf.method = Method::Fgsf;
    fgsf.scrub.lambda = 0.0;
    let ra = run_training(&base).unwrap();
    let rb = run_training(&fgsf).unwrap();
    assert_eq!(rb.result.scrubs, 0);
    assert_eq!(
        fs::read(a.path().join(CSV_FILE)).unwrap(),
        fs::read(b.path().join(CSV_FILE)).unwrap()
    );
    assert_eq!(ra.result.evals, rb.result.evals);
}

#[test]
fn different_seeds_differ() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = small(a.path());
    let mut cb = small(b.path());
    cb.seed = 1;
    run_training(&ca).unwrap();
    run_training(&cb).unwrap();
    assert_ne!(
        fs::read(a.path().join(CSV_FILE)).unwrap(),
        fs::read(b.path().join(CSV_FILE)).unwrap()
    );
}

#[test]
fn update_count_follows_replay_ratio() {
    for ratio in [1u64, 2, 4] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.total_env_steps = Some(400);
        cfg.sac.replay_ratio = ratio;
        let out = run_training(&cfg).unwrap();
        assert_eq!(out.result.grad_steps, ratio * (400 - 200), "ratio {ratio}");
    }
}

#[test]
fn each_method_runs() {
    for method in [Method::Fgsf, Method::Reset, Method::Gauss] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.total_env_steps = Some(500);
        cfg.method = method;
        cfg.scrub.lambda = 1e-6;
        cfg.reset_interval = Some(100);
        let r = run_training(&cfg).unwrap().result;
        match method {
            Method::Reset => assert_eq!(r.resets, 3),
            _ => assert_eq!(r.scrubs, 30),
        }
    }
}

#[test]
fn critic_only_target_scrubs_on_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.total_env_steps = Some(300);
    cfg.method = Method::Fgsf;
    cfg.scrub.lambda = 1e-6;
    cfg.scrub.target = ScrubTarget::CriticOnly;
    let r = run_training(&cfg).unwrap().result;
    assert_eq!(r.scrubs, 10);
}

fn resume_compare(split: u64) {
    let straight_dir = tempfile::tempdir().unwrap();
    let resume_dir = tempfile::tempdir().unwrap();
    let mut cfg = small(straight_dir.path());
    cfg.method = Method::Fgsf;
    cfg.scrub.lambda = 1e-6;
    let mut straight = Trainer::new(cfg.clone()).unwrap();
    let ckpt = resume_dir.path().join("checkpoint.bin");
    straight.run_until(split).unwrap();
    straight.save_checkpoint(&ckpt).unwrap();
    straight.run().unwrap();
    let straight_csv = fs::read(straight_dir.path().join(CSV_FILE)).unwrap();

    let mut resumed = Trainer::load_checkpoint(&ckpt).unwrap();
    assert_eq!(resumed.state().env_steps, split);
    resumed.run().unwrap();
    assert_eq!(straight_csv, fs::read(straight_dir.path().join(CSV_FILE)).unwrap());
    assert_eq!(straight.result(), resumed.result());
}

#[test]
fn resume_matches_straight_run() {
    resume_compare(150);
    resume_compare(617);
}

#[test]
fn checkpoint_roundtrip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(small(dir.path())).unwrap();
    t.run_until(450).unwrap();
    let p1 = dir.path().join("a.bin");
    let p2 = dir.path().join("b.bin");
    t.save_checkpoint(&p1).unwrap();
    let loaded = Trainer::load_checkpoint(&p1).unwrap();
    loaded.save_checkpoint(&p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    assert_eq!(loaded.state().grad_steps, 250);
}

#[test]
fn checkpoint_corruption_is_classified() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(small(dir.path())).unwrap();
    t.run_until(250).unwrap();
    let bytes = encode(t.config(), t.state()).unwrap();
    assert!(decode(&bytes).is_ok());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(Error::BadMagic)));
    assert!(matches!(decode(&bytes[..2]), Err(Error::BadMagic)));

    let mut newer = bytes.clone();
    newer[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    assert!(matches!(
        decode(&newer),
        Err(Error::VersionMismatch { found, expected }) if found == VERSION + 1 && expected == VERSION
    ));

    for cut in [6, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(decode(&bytes[..cut]), Err(Error::TruncatedCheckpoint)),
            "cut at {cut}"
        );
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode(&long), Err(Error::CorruptCheckpoint(_))));
    assert_eq!(&bytes[..4], MAGIC);
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.total_env_steps = Some(300);
    cfg.checkpoint_every = 100;
    run_training(&cfg).unwrap();
    let t = Trainer::load_checkpoint(&dir.path().join("checkpoint.bin")).unwrap();
    assert_eq!(t.state().env_steps, 300);
}

#[test]
fn diverging_run_writes_diagnostic_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.sac.learning_rate = 1e300;
    let err = run_training(&cfg).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    let log = RunLog::read(&dir.path().join(CSV_FILE)).unwrap();
    assert!(log.rows.last().unwrap().tr_f_actor.is_nan());
}

#[test]
fn sweep_writes_one_log_per_cell_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = small(dir.path());
    base.total_env_steps = Some(300);
    let axis = SweepAxis::parse("lambda", "5e-6,5e-7,5e-8").unwrap();
    let report = sweep(&base, &axis, &[0, 1]).unwrap();
    let mut csvs = 0;
    let mut summaries = 0;
    for entry in walk(dir.path()) {
        match entry.file_name().unwrap().to_str().unwrap() {
            CSV_FILE => csvs += 1,
            SUMMARY_FILE => summaries += 1,
            _ => {}
        }
    }
    assert_eq!((csvs, summaries), (6, 1));
    assert_eq!(report.cells.len(), 3);
    assert!(report.cells.iter().all(|c| c.failed() == 0 && c.runs.len() == 2));
    let summary = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    assert!(summary.contains("5e-7"));
    for c in &report.cells {
        for r in &c.runs {
            let r = r.outcome.as_ref().unwrap();
            assert_eq!(r.method, "fgsf");
            assert_eq!(r.scrubs, 10);
        }
    }
}

#[test]
fn replay_ratio_sweep_follows_update_count_law() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = small(dir.path());
    base.total_env_steps = Some(300);
    let axis = SweepAxis::parse("replay_ratio", "1,2,4").unwrap();
    let report = sweep(&base, &axis, &[3]).unwrap();
    for (cell, ratio) in report.cells.iter().zip([1u64, 2, 4]) {
        let r = cell.runs[0].outcome.as_ref().unwrap();
        assert_eq!(r.grad_steps, ratio * 100);
    }
}

#[test]
fn sweep_marks_failed_cells_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = small(dir.path());
    base.total_env_steps = Some(300);
    base.sac.learning_rate = 1e300;
    let axis = SweepAxis::parse("replay_ratio", "1").unwrap();
    let report = sweep(&base, &axis, &[0, 1]).unwrap();
    assert_eq!(report.cells[0].failed(), 2);
    assert!(fs::read_to_string(dir.path().join(SUMMARY_FILE))
        .unwrap()
        .contains("failed"));
}

#[test]
fn analyzer_reads_a_training_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.total_env_steps = Some(4000);
    cfg.log_every = 20;
    let out = run_training(&cfg).unwrap();
    let a = analyze_log(&out.csv_path, &SavGolSpec::default(), &PhaseThresholds::default()).unwrap();
    assert_eq!(a.rows, 190);
    assert!(a.final_return.is_some());
    assert!(a.render().contains("[critic]"));
}

#[test]
fn analyzer_rejects_short_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let out = run_training(&cfg).unwrap();
    assert!(matches!(
        analyze_log(&out.csv_path, &SavGolSpec::default(), &PhaseThresholds::default()),
        Err(Error::SeriesTooShort { len: 16, .. })
    ));
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
