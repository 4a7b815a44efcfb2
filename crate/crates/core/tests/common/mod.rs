#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scarf::data::{one_hot, read_csv, ProcessedDataset, RawValue, Schema};
use scarf::losses::{align_uniform, barlow_twins, binary_logistic, infonce, similarity_backward};
use scarf::nn::{l2_normalize_rows, l2_normalize_rows_backward, mse, softmax_cross_entropy, Activation, Matrix, Mlp};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Mse,
    Infonce,
    Logistic,
    Barlow,
    AlignUniform,
}

pub const ALL_LOSSES: [LossKind; 6] = [
    LossKind::CrossEntropy,
    LossKind::Mse,
    LossKind::Infonce,
    LossKind::Logistic,
    LossKind::Barlow,
    LossKind::AlignUniform,
];

impl LossKind {
    /// Losses over two views of the batch; their input is `[a; b]`.
    pub fn paired(self) -> bool {
        matches!(self, LossKind::Infonce | LossKind::Barlow | LossKind::AlignUniform)
    }
}

/// A chain of networks feeding one loss.
pub struct GradCase {
    pub kind: LossKind,
    pub nets: Vec<Mlp>,
    pub input: Matrix,
    pub target: Matrix,
    pub temperature: f64,
    pub lambda: f64,
    pub cross_pairs: bool,
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn random_net(input: usize, output: usize, layers: usize, last: Activation, rng: &mut ChaCha8Rng) -> Mlp {
    let mut widths = vec![input];
    for _ in 1..layers {
        widths.push(rng.random_range(2..=8));
    }
    widths.push(output);
    let mut net = Mlp::init(&widths, last, rng).unwrap();
    // zero biases put dead rows exactly on the ReLU kink
    let mut params = net.parameters_mut();
    for bias in params.iter_mut().skip(1).step_by(2) {
        for b in bias.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    net
}

impl GradCase {
    pub fn random(kind: LossKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=6);
        let m = rng.random_range(2..=8);
        let layers = rng.random_range(1..=3);
        let out = match kind {
            LossKind::Logistic => 1,
            _ => rng.random_range(2..=8),
        };
        let mut nets = Vec::new();
        let input = if kind.paired() {
            // encoder then head, as in pre-training
            let hidden = rng.random_range(2..=8);
            let head_layers = rng.random_range(1..=2);
            nets.push(random_net(m, hidden, layers.min(2), Activation::Relu, &mut rng));
            nets.push(random_net(hidden, out, head_layers, Activation::Identity, &mut rng));
            let a = random_matrix(n, m, &mut rng);
            let mut b = a.clone();
            for v in b.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
            Matrix::vstack(&[&a, &b]).unwrap()
        } else {
            nets.push(random_net(m, out, layers, Activation::Identity, &mut rng));
            random_matrix(n, m, &mut rng)
        };
        let target = match kind {
            LossKind::CrossEntropy => {
                let mut t = Matrix::zeros(n, out);
                for i in 0..n {
                    // soft targets cover label smoothing and mixup
                    let raw: Vec<f64> = (0..out).map(|_| rng.random_range(0.0..1.0)).collect();
                    let total: f64 = raw.iter().sum();
                    for (k, v) in raw.iter().enumerate() {
                        t.set(i, k, v / total);
                    }
                }
                t
            }
            LossKind::Mse => random_matrix(n, out, &mut rng),
            LossKind::Logistic => {
                Matrix::from_vec(n, 1, (0..n).map(|_| f64::from(rng.random_bool(0.5) as u8)).collect()).unwrap()
            }
            _ => Matrix::zeros(0, 0),
        };
        Self {
            kind,
            nets,
            input,
            target,
            temperature: [0.5, 1.0, 2.0][rng.random_range(0..3)],
            lambda: rng.random_range(0.001..0.5),
            cross_pairs: rng.random_bool(0.5),
        }
    }

    fn head(&self, out: &Matrix) -> (f64, Matrix) {
        match self.kind {
            LossKind::CrossEntropy => softmax_cross_entropy(out, &self.target).unwrap(),
            LossKind::Mse => mse(out, &self.target).unwrap(),
            LossKind::Logistic => {
                let (l, g) = binary_logistic(out.data(), self.target.data()).unwrap();
                (l, Matrix::from_vec(out.rows(), 1, g).unwrap())
            }
            LossKind::Infonce => {
                let n = out.rows() / 2;
                let norm = l2_normalize_rows(out);
                let za = norm.matrix.slice_rows(0, n);
                let zb = norm.matrix.slice_rows(n, 2 * n);
                let s = za.matmul_nt(&zb).unwrap();
                let (l, gs) = infonce(&s, self.temperature).unwrap();
                let (ga, gb) = similarity_backward(&gs, &za, &zb).unwrap();
                let g = Matrix::vstack(&[&ga, &gb]).unwrap();
                (l, l2_normalize_rows_backward(&norm, &g).unwrap())
            }
            LossKind::Barlow => {
                let n = out.rows() / 2;
                let r = barlow_twins(&out.slice_rows(0, n), &out.slice_rows(n, 2 * n), self.lambda).unwrap();
                (r.loss, Matrix::vstack(&[&r.grad_a, &r.grad_b]).unwrap())
            }
            LossKind::AlignUniform => {
                let n = out.rows() / 2;
                let norm = l2_normalize_rows(out);
                let za = norm.matrix.slice_rows(0, n);
                let zb = norm.matrix.slice_rows(n, 2 * n);
                let r = align_uniform(&za, &zb, 1.0, 1.0, self.cross_pairs).unwrap();
                let g = Matrix::vstack(&[&r.grad_z, &r.grad_z_tilde]).unwrap();
                (r.loss, l2_normalize_rows_backward(&norm, &g).unwrap())
            }
        }
    }

    pub fn loss(&self) -> f64 {
        let mut x = self.input.clone();
        for net in &self.nets {
            x = net.predict(&x).unwrap();
        }
        self.head(&x).0
    }

    /// Analytic parameter gradients, flattened in parameter order.
    pub fn analytic(&mut self) -> Vec<f64> {
        let mut x = self.input.clone();
        for net in &mut self.nets {
            x = net.forward(&x).unwrap();
        }
        let (_, mut g) = self.head(&x);
        let mut per_net = Vec::new();
        for net in self.nets.iter().rev() {
            let (grads, upstream) = net.backward(&g).unwrap();
            per_net.push(grads.slices().concat());
            g = upstream;
        }
        per_net.reverse();
        per_net.concat()
    }

    pub fn numeric(&mut self, h: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for k in 0..self.nets.len() {
            let sizes: Vec<usize> = self.nets[k].parameter_shapes();
            for (s, &size) in sizes.iter().enumerate() {
                for i in 0..size {
                    let orig = self.nets[k].parameters_mut()[s][i];
                    self.nets[k].parameters_mut()[s][i] = orig + h;
                    let up = self.loss();
                    self.nets[k].parameters_mut()[s][i] = orig - h;
                    let down = self.loss();
                    self.nets[k].parameters_mut()[s][i] = orig;
                    out.push((up - down) / (2.0 * h));
                }
            }
        }
        out
    }

    /// `‖a − n‖ / max(‖a‖, ‖n‖)` with a floor for all-zero gradients.
    pub fn relative_error(&mut self) -> f64 {
        let a = self.analytic();
        let n = self.numeric(1e-6);
        relative_error(&a, &n)
    }
}

pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    assert_eq!(a.len(), n.len());
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

/// Mixed numerical/categorical dataset of `rows` rows with `numerical` and
/// `categorical` raw features.
pub fn mixed_dataset(rows: usize, numerical: usize, categorical: usize, seed: u64) -> ProcessedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut header: Vec<String> = (0..numerical).map(|j| format!("n{j}")).collect();
    header.extend((0..categorical).map(|j| format!("c{j}")));
    header.push("y".into());
    let mut text = header.join(",") + "\n";
    for _ in 0..rows {
        let mut cells: Vec<String> = (0..numerical).map(|_| format!("{:.3}", rng.random_range(-3.0..3.0))).collect();
        cells.extend((0..categorical).map(|_| ["a", "b", "c", "d"][rng.random_range(0..4)].to_string()));
        cells.push(if rng.random_bool(0.5) { "p" } else { "q" }.into());
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    let mut schema = String::from("[columns]\n");
    for j in 0..numerical {
        schema.push_str(&format!("n{j} = \"numerical\"\n"));
    }
    for j in 0..categorical {
        schema.push_str(&format!("c{j} = \"categorical\"\n"));
    }
    schema.push_str("y = \"label\"\n");
    let schema = Schema::from_toml_str(&schema).unwrap();
    let raw = read_csv(text.as_bytes(), &schema).unwrap();
    let imputed = scarf::data::impute(&raw).unwrap();
    one_hot(&imputed).unwrap()
}

/// Raw value of feature `j` as encoded in `row`.
pub fn decode(ds: &ProcessedDataset, j: usize, row: &[f64]) -> RawValue {
    let block = &ds.blocks[j];
    if block.is_categorical() {
        let cells = &row[block.range()];
        RawValue::Categorical(cells.iter().position(|&c| c == 1.0))
    } else {
        RawValue::Numerical(row[block.start])
    }
}

pub fn block_bits_equal(ds: &ProcessedDataset, j: usize, a: &[f64], b: &[f64]) -> bool {
    ds.blocks[j].range().all(|c| a[c].to_bits() == b[c].to_bits())
}

/// Looks for the banknote-authentication CSV: `SCARF_BANKNOTE_CSV`, then
/// `tests/data/banknote_authentication.csv`.
pub fn banknote_csv() -> Option<std::path::PathBuf> {
    if let Ok(p) = std::env::var("SCARF_BANKNOTE_CSV") {
        let p = std::path::PathBuf::from(p);
        return p.exists().then_some(p);
    }
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/banknote_authentication.csv");
    p.exists().then_some(p)
}

/// Welch's test written out directly, with the t distribution from statrs.
pub fn welch_oracle(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    (t, df, 2.0 * dist.cdf(-t.abs()))
}

/// Win/loss counts by enumerating every (dataset, i, j) with the oracle test.
pub fn brute_force_wins(
    runs: &[scarf::eval::MethodRun],
    methods: &[String],
    p: f64,
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let k = methods.len();
    let mut wins = vec![vec![0; k]; k];
    let mut losses = vec![vec![0; k]; k];
    let mut datasets: Vec<(String, scarf::eval::Setting)> =
        runs.iter().map(|r| (r.dataset_id.clone(), r.setting)).collect();
    datasets.sort_by(|a, b| (a.0.as_str(), a.1.as_str()).cmp(&(b.0.as_str(), b.1.as_str())));
    datasets.dedup();
    for (d, s) in &datasets {
        let acc = |m: &str| -> Vec<f64> {
            runs.iter()
                .filter(|r| &r.dataset_id == d && r.setting == *s && r.method == m)
                .map(|r| r.test_accuracy)
                .collect()
        };
        for i in 0..k {
            for j in 0..k {
                let (a, b) = (acc(&methods[i]), acc(&methods[j]));
                if i == j || a.len() < 2 || b.len() < 2 {
                    continue;
                }
                let (va, vb) = (variance(&a), variance(&b));
                let (ma, mb) = (mean(&a), mean(&b));
                let pv = if va == 0.0 && vb == 0.0 {
                    if ma == mb { 1.0 } else { 0.0 }
                } else {
                    welch_oracle(&a, &b).2
                };
                if pv < p {
                    if ma > mb {
                        wins[i][j] += 1;
                    } else if ma < mb {
                        losses[i][j] += 1;
                    }
                }
            }
        }
    }
    (wins, losses)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Results table over `datasets` × `methods` × `trials` with accuracies
/// drawn so that some comparisons are significant and some are not.
pub fn synthetic_runs(seed: u64, datasets: usize, methods: &[String], trials: usize) -> Vec<scarf::eval::MethodRun> {
    use scarf::eval::{MethodRun, Setting};
    use scarf::training::StopReason;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut runs = Vec::new();
    for d in 0..datasets {
        let offsets: Vec<f64> = methods.iter().map(|_| rng.random_range(-0.05..0.05)).collect();
        for (m, name) in methods.iter().enumerate() {
            let constant = rng.random_bool(0.1);
            for t in 0..trials {
                let noise = if constant { 0.0 } else { rng.random_range(-0.02..0.02) };
                runs.push(MethodRun {
                    dataset_id: format!("d{d}"),
                    method: name.clone(),
                    setting: Setting::Full,
                    trial: t,
                    seed: t as u64,
                    test_accuracy: 0.8 + offsets[m] + noise,
                    epochs_used: 1,
                    stop_reason: StopReason::Patience,
                    pretrain_epochs: None,
                    pretrain_stop_reason: None,
                });
            }
        }
    }
    runs
}
