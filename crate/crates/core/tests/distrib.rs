use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use dodge_rl::agents::{AgentKind, EpsilonSchedule, TrainConfig, TrainState};
use dodge_rl::arena::{ArenaConfig, FEATURE_COUNT};
use dodge_rl::distrib::{
    deserialize_model, encode_message, read_message, run_worker, write_message, Backoff, Generator, Learner,
    LearnerSettings, ManagerHandle, ManagerOptions, Message, WorkerError, WorkerSettings, ACK_DUPLICATE, ACK_OK,
    ACK_REJECTED,
};
use dodge_rl::nncore::{specs_single, Head, Network};

fn learner(seed: u64, total_steps: u64) -> Learner {
    let net = Network::<f32>::new(&specs_single(FEATURE_COUNT, &[8], 5), Head::Single, seed).unwrap();
    let ts = TrainState::new(AgentKind::Dqn, net, TrainConfig::default()).unwrap();
    let settings = LearnerSettings {
        batch_size: 16,
        replay_capacity: 5_000,
        replay_warmup: 32,
        train_batches_per_upload: 2,
        snapshot_every_uploads: 15,
        total_training_steps: total_steps,
        seed,
        run_dir: None,
    };
    Learner::new(ts, settings, None).unwrap()
}

fn generator(worker_id: u32) -> Generator {
    Generator::new(worker_id, 3, ArenaConfig::default(), EpsilonSchedule::new(1.0, 0.1, 100), 0)
}

fn options(max_uploads: Option<u64>) -> ManagerOptions {
    ManagerOptions {
        max_uploads,
        shutdown_grace: Duration::from_secs(2),
    }
}

fn fast_backoff() -> Backoff {
    Backoff {
        base: Duration::from_millis(20),
        cap: Duration::from_millis(80),
        max_attempts: 3,
    }
}

fn spawn(learner: Learner, opts: ManagerOptions) -> ManagerHandle {
    ManagerHandle::spawn(TcpListener::bind("127.0.0.1:0").unwrap(), learner, opts).unwrap()
}

fn connect(handle: &ManagerHandle, worker_id: u32) -> TcpStream {
    let mut s = TcpStream::connect(handle.addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
    write_message(&mut s, &Message::Hello { worker_id }).unwrap();
    s
}

fn upload(stream: &mut TcpStream, g: &mut Generator, net: &Network<f32>, n: usize) -> Message {
    let batch = g.generate(net, 0, n).unwrap();
    write_message(stream, &Message::Samples(batch)).unwrap();
    read_message(stream).unwrap()
}

#[test]
fn manager_survives_a_client_dropping_mid_frame() {
    let handle = spawn(learner(1, 1_000_000), options(Some(6)));
    let net = Network::<f32>::new(&specs_single(FEATURE_COUNT, &[8], 5), Head::Single, 9).unwrap();

    let mut dropper = connect(&handle, 2);
    let batch = generator(2).generate(&net, 0, 50).unwrap();
    let frame = encode_message(&Message::Samples(batch)).unwrap();
    dropper.write_all(&frame[..frame.len() / 2]).unwrap();
    drop(dropper);

    let mut a = connect(&handle, 0);
    let mut b = connect(&handle, 1);
    let (mut ga, mut gb) = (generator(0), generator(1));
    for _ in 0..3 {
        assert_eq!(upload(&mut a, &mut ga, &net, 50), Message::Ack(ACK_OK));
        assert_eq!(upload(&mut b, &mut gb, &net, 50), Message::Ack(ACK_OK));
    }
    drop((a, b));
    let (summary, learner) = handle.join().unwrap();
    assert_eq!(summary.uploads, 6);
    assert_eq!(summary.connections, 3);
    assert_eq!(learner.replay.len(), 300);
}

#[test]
fn repeated_and_invalid_batches_are_answered_not_trained() {
    let handle = spawn(learner(2, 1_000_000), options(Some(2)));
    let net = Network::<f32>::new(&specs_single(FEATURE_COUNT, &[8], 5), Head::Single, 9).unwrap();
    let mut s = connect(&handle, 0);
    let batch = generator(0).generate(&net, 0, 40).unwrap();
    write_message(&mut s, &Message::Samples(batch.clone())).unwrap();
    assert_eq!(read_message(&mut s).unwrap(), Message::Ack(ACK_OK));
    write_message(&mut s, &Message::Samples(batch.clone())).unwrap();
    assert_eq!(read_message(&mut s).unwrap(), Message::Ack(ACK_DUPLICATE));

    let mut bad = batch;
    bad.batch_seq = 1;
    bad.transitions[0].action = 7;
    write_message(&mut s, &Message::Samples(bad)).unwrap();
    assert_eq!(read_message(&mut s).unwrap(), Message::Ack(ACK_REJECTED));

    write_message(&mut s, &Message::ModelRequest).unwrap();
    let Message::Model(bytes) = read_message(&mut s).unwrap() else {
        panic!("expected MODEL");
    };
    let (served, kind, _) = deserialize_model(&bytes).unwrap();
    assert_eq!(kind, AgentKind::Dqn);
    handle.stop();
    drop(s);
    let (summary, learner) = handle.join().unwrap();
    assert_eq!(summary.uploads, 1);
    assert_eq!(served, learner.train.online);
}

#[test]
fn workers_stop_on_shutdown_when_training_ends() {
    // 4 steps budget with 2 batches per upload: done after the third upload
    // (the first only fills the warmup).
    let handle = spawn(learner(3, 4), options(None));
    let settings = WorkerSettings {
        manager_addr: handle.addr.to_string(),
        samples_per_upload: 40,
        backoff: fast_backoff(),
        max_uploads: None,
    };
    let workers: Vec<_> = (0..2)
        .map(|w| {
            let settings = settings.clone();
            std::thread::spawn(move || run_worker(&settings, &mut generator(w)))
        })
        .collect();
    let results: Vec<_> = workers.into_iter().map(|w| w.join().unwrap().unwrap()).collect();
    let (summary, learner) = handle.join().unwrap();
    assert!(results.iter().all(|r| r.shutdown_received));
    assert_eq!(learner.step(), 4);
    assert_eq!(results.iter().map(|r| r.uploads).sum::<u64>(), summary.uploads);
}

#[test]
fn unreachable_manager_gives_up_after_backoff() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let settings = WorkerSettings {
        manager_addr: port.to_string(),
        samples_per_upload: 10,
        backoff: fast_backoff(),
        max_uploads: None,
    };
    match run_worker(&settings, &mut generator(0)) {
        Err(WorkerError::Unreachable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected Unreachable, got {other:?}"),
    }
}

#[test]
fn late_connection_is_told_to_shut_down_not_reset() {
    // 2 batches per upload and a 2-step budget: the first upload stays under
    // the warmup of 32, the second finishes training.
    for _ in 0..5 {
        let handle = spawn(learner(4, 2), options(None));
        let net = Network::<f32>::new(&specs_single(FEATURE_COUNT, &[8], 5), Head::Single, 9).unwrap();
        let mut a = connect(&handle, 0);
        let mut g = generator(0);
        assert_eq!(upload(&mut a, &mut g, &net, 20), Message::Ack(ACK_OK));

        let last = g.generate(&net, 0, 40).unwrap();
        write_message(&mut a, &Message::Samples(last)).unwrap();
        let mut b = connect(&handle, 1);
        assert_eq!(read_message(&mut a).unwrap(), Message::Ack(ACK_OK));
        assert_eq!(read_message(&mut a).unwrap(), Message::Shutdown);
        drop(a);

        assert_eq!(read_message(&mut b).unwrap(), Message::Shutdown);
        drop(b);
        let (summary, _) = handle.join().unwrap();
        assert_eq!(summary.connections, 2);
    }
}
