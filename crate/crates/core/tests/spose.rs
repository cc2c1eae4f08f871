use affect_geometry::spose::{
    heldout_accuracy, loss_and_gradient, predicted_odd, reproducibility, train, SplitSpec, TrainConfig,
};
use affect_geometry::triplets::{sample_trials, TripletTrial};
use affect_geometry::{Embedding, Observation, StimulusId};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Objective recomputed from scratch: mean negative log softmax of the
/// chosen pair plus lambda times the mean L1 norm of the rows in the batch.
fn objective(x: &Array2<f64>, batch: &[Observation], lambda: f64) -> f64 {
    let mut nll = 0.0;
    for o in batch {
        let (i, j) = o.similar_pair();
        let k = o.odd;
        let d = |a: StimulusId, b: StimulusId| x.row(a.0).dot(&x.row(b.0));
        let (sij, sik, sjk) = (d(i, j), d(i, k), d(j, k));
        nll -= sij - (sij.exp() + sik.exp() + sjk.exp()).ln();
    }
    let mut rows: Vec<usize> = batch.iter().flat_map(|o| o.members.map(|m| m.0)).collect();
    rows.sort_unstable();
    rows.dedup();
    let l1: f64 = rows.iter().map(|&r| x.row(r).iter().map(|v| v.abs()).sum::<f64>()).sum();
    nll / batch.len() as f64 + lambda * l1 / rows.len() as f64
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, b: usize) -> Vec<Observation> {
    (0..b)
        .map(|t| {
            let mut m = [0usize; 3];
            m[0] = rng.random_range(0..n);
            loop {
                m[1] = rng.random_range(0..n);
                if m[1] != m[0] {
                    break;
                }
            }
            loop {
                m[2] = rng.random_range(0..n);
                if m[2] != m[0] && m[2] != m[1] {
                    break;
                }
            }
            let trial = TripletTrial::new(t as u64, m.map(StimulusId)).unwrap();
            Observation::new(&trial, StimulusId(m[rng.random_range(0..3)])).unwrap()
        })
        .collect()
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + instance);
        let (n, d) = (rng.random_range(4..9), rng.random_range(2..6));
        // Entries well away from zero keep the L1 term differentiable.
        let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(0.2..1.5));
        let b = rng.random_range(3..12);
        let batch = random_batch(&mut rng, n, b);
        let lambda = rng.random_range(0.0..0.05);
        let (loss, grad) = loss_and_gradient(&Embedding::new(x.clone()).unwrap(), &batch, lambda).unwrap();
        assert!((loss - objective(&x, &batch, lambda)).abs() < 1e-12);
        for i in 0..n {
            for k in 0..d {
                let mut up = x.clone();
                up[[i, k]] += h;
                let mut dn = x.clone();
                dn[[i, k]] -= h;
                let fd = (objective(&up, &batch, lambda) - objective(&dn, &batch, lambda)) / (2.0 * h);
                let err = (grad[[i, k]] - fd).abs() / grad[[i, k]].abs().max(fd.abs()).max(1e-8);
                worst = worst.max(err);
            }
        }
    }
    assert!(worst < 1e-6, "max relative error {worst}");
}

fn planted(seed: u64) -> (Embedding, Vec<Observation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = Array2::from_shape_simple_fn((20, 3), || rng.random::<f64>().powi(2) * 3.0);
    let truth = Embedding::new(truth).unwrap();
    let obs = sample_trials(20, 12, 1)
        .unwrap()
        .iter()
        .map(|t| Observation::new(t, predicted_odd(&truth, t.members())).unwrap())
        .collect();
    (truth, obs)
}

#[test]
fn training_is_thread_count_invariant() {
    let (_, obs) = planted(4);
    let (tr, ho) = SplitSpec::default().split(&obs);
    let cfg = TrainConfig { dim: 3, epochs: 15, batch_size: 300, seed: 2, ..Default::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(20, &tr, Some(&ho), &cfg).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.embedding.values(), b.embedding.values());
    assert_eq!(a.history, b.history);
}

#[test]
fn small_recovery_and_reproducibility() {
    let (_, obs) = planted(5);
    let (tr, ho) = SplitSpec::default().split(&obs);
    let cfg = TrainConfig { dim: 3, epochs: 200, batch_size: 128, patience: 200, ..Default::default() };
    let a = train(20, &tr, Some(&ho), &cfg).unwrap();
    assert!(heldout_accuracy(&a.embedding, &ho).unwrap() > 0.8);
    let rep = reproducibility(&[a.embedding.clone(), a.embedding.clone()]).unwrap();
    assert!(rep.scores.iter().flatten().all(|s| s.is_none() || *s == Some(1.0)));
}

#[test]
fn checkpoint_file_round_trip() {
    let (truth, _) = planted(6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.ckpt");
    truth.save_checkpoint(&path).unwrap();
    assert_eq!(Embedding::load_checkpoint(&path).unwrap().values(), truth.values());
    let csv = dir.path().join("e.csv");
    let mut f = std::fs::File::create(&csv).unwrap();
    truth.write_csv(&mut f).unwrap();
    drop(f);
    assert_eq!(Embedding::load(&csv).unwrap().values(), truth.values());
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 40;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(Embedding::load_checkpoint(&path).is_err());
}
