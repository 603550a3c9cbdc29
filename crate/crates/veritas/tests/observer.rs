mod common;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::os::unix::fs::symlink;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use common::*;
use veritas::observer::{self, Forward, ObserverConfig, ObserverError, RunOutcome};
use veritas_core::digest::Digest;
use veritas_core::model::{EntryKind, Stream};
use veritas_core::SessionRecord;

#[derive(Clone, Default)]
struct Shared(Arc<Mutex<Vec<u8>>>);

impl Write for Shared {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Shared {
    fn bytes(&self) -> Vec<u8> {
        self.0.lock().unwrap().clone()
    }
}

struct Fixture {
    project: Project,
    session: SessionRecord,
    config: ObserverConfig,
}

fn fixture(extra_config: &str) -> Fixture {
    fixture_with(|c| c + extra_config)
}

fn fixture_with(edit: impl FnOnce(String) -> String) -> Fixture {
    let project = Project::new();
    project.init(&[]);
    let path = project.dir().config_path();
    fs::write(&path, edit(fs::read_to_string(&path).unwrap())).unwrap();
    let dir = project.dir();
    let config = dir.observer_config(&dir.config().unwrap(), None).unwrap();
    let session = dir.load().unwrap();
    Fixture { project, session, config }
}

fn argv(args: &[&str]) -> Vec<OsString> {
    args.iter().map(OsString::from).collect()
}

impl Fixture {
    fn run(&mut self, args: &[&str]) -> (RunOutcome, Vec<u8>, Vec<u8>) {
        let (out, err) = (Shared::default(), Shared::default());
        let fwd = Forward::Writers(Box::new(out.clone()), Box::new(err.clone()));
        let outcome = observer::run_command(&mut self.session, &self.config, &argv(args), fwd).unwrap();
        (outcome, out.bytes(), err.bytes())
    }
}

#[test]
fn forwarded_bytes_equal_transcripts() {
    let mut f = fixture("");
    let script = "import sys\n\
        sys.stdout.buffer.write(bytes(range(256)) + b'\\nno newline at end')\n\
        sys.stdout.flush()\n\
        sys.stderr.write('warn: x\\n' * 1000)\n";
    let (o, out, err) = f.run(&["python3", "-c", script]);
    let mut want = (0u8..=255).collect::<Vec<u8>>();
    want.extend_from_slice(b"\nno newline at end");
    assert_eq!(out, want);
    assert_eq!(err, b"warn: x\n".repeat(1000));
    assert_eq!(fs::read(&o.stdout_path).unwrap(), out);
    assert_eq!(fs::read(&o.stderr_path).unwrap(), err);
    assert_eq!(o.record.stdout.digest, Digest::of(&out));
    assert_eq!(o.record.stderr.bytes, err.len() as u64);
    assert_eq!(o.record.exit_code, 0);
}

#[test]
fn metrics_point_into_transcripts() {
    let mut f = fixture("");
    let script = "import sys, time\n\
        print('epoch 1 loss: 0.91', flush=True)\n\
        time.sleep(0.05)\n\
        sys.stderr.write('val_loss=0.52\\n'); sys.stderr.flush()\n\
        time.sleep(0.05)\n\
        print('epoch 2 loss: 0.44')\n";
    let (o, out, err) = f.run(&["python3", "-c", script]);
    let m = &o.record.metrics;
    let got: Vec<(&str, &str, Stream)> =
        m.iter().map(|m| (m.name.as_str(), m.lexical_value.as_str(), m.stream)).collect();
    assert_eq!(
        got,
        [("loss", "0.91", Stream::Stdout), ("val_loss", "0.52", Stream::Stderr), ("loss", "0.44", Stream::Stdout)]
    );
    for r in m {
        let t = if r.stream == Stream::Stdout { &out } else { &err };
        let line = &t[r.byte_offset as usize..];
        let line = &line[..line.iter().position(|&b| b == b'\n').unwrap()];
        let line = String::from_utf8_lossy(line);
        assert!(line.contains(&format!("{}", r.lexical_value)), "{line}");
    }
    assert!(m.windows(2).all(|w| w[0].observed_at <= w[1].observed_at));
}

#[test]
fn custom_patterns_replace_the_default() {
    let mut f = fixture_with(|c| {
        c.replace("metric_pattern = default\n", "")
            + "metric_pattern = top-1 accuracy {name=top1}{value}\nmetric_pattern = ^{name} is {value}\n"
    });
    let script = "print('epoch 3 top-1 accuracy 0.75')\nprint('f1 is 0.5')\nprint('loss: 0.1')\n";
    let (o, ..) = f.run(&["python3", "-c", script]);
    let got: Vec<(&str, &str)> =
        o.record.metrics.iter().map(|m| (m.name.as_str(), m.lexical_value.as_str())).collect();
    assert_eq!(got, [("top1", "0.75"), ("f1", "0.5")]);
    assert_eq!(o.record.metric_patterns.len(), 2);
}

#[test]
fn exit_codes_pass_through() {
    let mut f = fixture("");
    let (o, ..) = f.run(&["sh", "-c", "exit 42"]);
    assert_eq!(o.record.exit_code, 42);
    let (o, ..) = f.run(&["sh", "-c", "kill -9 $$"]);
    assert_eq!(o.record.exit_code, 137);
    assert_eq!(f.session.run_count(), 2);
}

#[test]
fn spawn_failures_record_nothing() {
    let mut f = fixture("");
    let err = observer::run_command(&mut f.session, &f.config, &argv(&["/nonexistent/tool"]), Forward::Discard)
        .unwrap_err();
    assert!(matches!(err, ObserverError::Spawn { .. }), "{err}");
    let err = observer::run_command(&mut f.session, &f.config, &[], Forward::Discard).unwrap_err();
    assert!(matches!(err, ObserverError::EmptyCommand), "{err}");
    assert_eq!(f.session.run_count(), 0);
}

#[test]
fn large_output_spills_to_disk_intact() {
    let mut f = fixture("");
    let script = "import sys\nchunk = bytes(range(256)) * 4096\n\
        for _ in range(20): sys.stdout.buffer.write(chunk)\n";
    let (o, out, _) = f.run(&["python3", "-c", script]);
    let want = (0u8..=255).collect::<Vec<u8>>().repeat(4096 * 20);
    assert_eq!(out.len(), want.len());
    assert!(out == want);
    assert_eq!(o.record.stdout.digest, Digest::of(&want));
    assert_eq!(Digest::of(&fs::read(&o.stdout_path).unwrap()), Digest::of(&want));
}

#[test]
fn background_writers_do_not_hold_the_run() {
    let mut f = fixture("");
    let start = Instant::now();
    let (o, out, _) = f.run(&["sh", "-c", "sleep 20 & echo done"]);
    assert!(start.elapsed() < Duration::from_secs(10), "{:?}", start.elapsed());
    assert_eq!(out, b"done\n");
    assert_eq!(o.record.exit_code, 0);
}

#[test]
fn source_snapshots_follow_the_tree() {
    let mut f = fixture("");
    f.project.write("train.py", "print('x')\n");
    f.project.write("data/config.yaml", "lr: 0.1\n");
    f.project.write(".git/HEAD", "ref: refs/heads/main\n");
    f.project.write("pkg/__pycache__/m.pyc", "junk");
    f.project.write("checkpoints/model.pt", "weights");
    symlink("train.py", f.project.path().join("link.py")).unwrap();
    let script = format!("cd '{}' && echo 'lr: 0.2' > data/config.yaml && echo new > made.txt", f.project.path().display());
    let (o, ..) = f.run(&["sh", "-c", &script]);
    let before: Vec<&str> = o.record.sources_before.files().iter().map(|d| d.path.as_str()).collect();
    assert_eq!(before, ["data/config.yaml", "link.py", "train.py"]);
    let after = &o.record.sources_after;
    assert!(after.get("made.txt").is_some());
    assert_ne!(
        after.get("data/config.yaml").unwrap().digest,
        o.record.sources_before.get("data/config.yaml").unwrap().digest
    );
    let link = after.get("link.py").unwrap();
    assert_eq!(link.kind, EntryKind::Symlink);
    assert_eq!(link.digest, Some(Digest::of(b"train.py")));
}

#[test]
fn sealed_sessions_refuse_runs() {
    let svc = shared_service();
    let (p, _) = sealed_bundle(svc, TWO_METRICS);
    let dir = p.dir();
    let mut session = dir.load().unwrap();
    let config = dir.observer_config(&dir.config().unwrap(), None).unwrap();
    let err = observer::run_command(&mut session, &config, &argv(&["true"]), Forward::Discard).unwrap_err();
    assert!(matches!(err, ObserverError::SessionSealed), "{err}");
}
