//! Brute-force reference implementations shared by the integration tests.
//! They deliberately avoid the library's data structures: n-grams are found
//! by linear scans over plain vectors.
#![allow(dead_code)]

use infoloss::ndcore::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

/// Sentence BLEU-4: clipped precisions, `1/(2·total)` for zero-match orders,
/// orders without candidate n-grams skipped, closest-reference brevity
/// penalty with ties to the shorter reference.
pub fn bleu4_oracle(candidate: &[String], references: &[Vec<String>]) -> f64 {
    let (m, t, c, r) = bleu_counts(candidate, references);
    bleu_from_counts(&m, &t, c, r)
}

pub fn bleu_counts(candidate: &[String], references: &[Vec<String>]) -> ([usize; 4], [usize; 4], usize, usize) {
    let mut matches = [0; 4];
    let mut totals = [0; 4];
    for n in 1..=4 {
        let cand = ngrams(candidate, n);
        totals[n - 1] = cand.len();
        for g in distinct(&cand) {
            let mut best = 0;
            for r in references {
                best = best.max(count(&ngrams(r, n), &g));
            }
            matches[n - 1] += count(&cand, &g).min(best);
        }
    }
    let mut lens: Vec<usize> = references.iter().map(Vec::len).collect();
    lens.sort();
    let mut closest = lens[0];
    for &l in &lens {
        let d = (l as i64 - candidate.len() as i64).abs();
        let bd = (closest as i64 - candidate.len() as i64).abs();
        if d < bd {
            closest = l;
        }
    }
    (matches, totals, candidate.len(), closest)
}

pub fn bleu_from_counts(matches: &[usize; 4], totals: &[usize; 4], c: usize, r: usize) -> f64 {
    if c == 0 {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        let p = if matches[n] == 0 {
            0.5 / totals[n] as f64
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        logs.push(p.ln());
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

/// Base CIDEr for one candidate against `references[video]`, document
/// frequencies over all videos' references.
pub fn cider_oracle(candidate: &[String], video: usize, references: &[Vec<Vec<String>>]) -> f64 {
    let n_videos = references.len() as f64;
    let mut total = 0.0;
    for n in 1..=4 {
        let df = |g: &[String]| -> usize {
            references
                .iter()
                .filter(|refs| refs.iter().any(|r| count(&ngrams(r, n), g) > 0))
                .count()
        };
        let vector = |tokens: &[String]| -> Vec<(Vec<String>, f64)> {
            let all = ngrams(tokens, n);
            distinct(&all)
                .into_iter()
                .map(|g| {
                    let tf = count(&all, &g) as f64 / all.len() as f64;
                    let idf = (n_videos / df(&g).max(1) as f64).ln();
                    (g, tf * idf)
                })
                .collect()
        };
        let cv = vector(candidate);
        let mut order = 0.0;
        for r in &references[video] {
            let rv = vector(r);
            let norm = |v: &[(Vec<String>, f64)]| v.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
            let (na, nb) = (norm(&cv), norm(&rv));
            if na == 0.0 || nb == 0.0 {
                continue;
            }
            let mut dot = 0.0;
            for (g, x) in &cv {
                for (h, y) in &rv {
                    if g == h {
                        dot += x * y;
                    }
                }
            }
            order += 10.0 * dot / (na * nb);
        }
        total += order / references[video].len() as f64;
    }
    total / 4.0
}

/// Random caption over a small alphabet so n-grams collide often.
pub fn random_caption(rng: &mut ChaCha8Rng, alphabet: &[&str], max_len: usize) -> Vec<String> {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string())
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Largest relative error between analytic and central-difference
/// gradients of `f` with respect to every input, where `f` maps the input
/// variables to a scalar. Relative error is `|a − n| / max(|a|, |n|, floor)`.
pub fn max_gradient_error(
    inputs: &[Tensor],
    f: &dyn Fn(&mut Graph, &[Var]) -> Var,
    h: f64,
    floor: f64,
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(format!("x{i}"), t.clone()))
        .collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let value = |inputs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.scalar_value(out)
    };
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = &grads[&format!("x{i}")];
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

/// Contracts a tensor-valued output against fixed random weights, giving a
/// scalar whose gradient exercises every output element.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Var {
    let shape = g.value(out).shape().to_vec();
    let w = random_tensor(&mut rng(seed), &shape, 1.0);
    let p = g.mul_const(out, w).unwrap();
    g.sum(p).unwrap()
}

/// Brute-force importance statistics for one (video, word) pair.
#[derive(Debug, PartialEq)]
pub struct OracleEntry {
    pub relevance: f64,
    pub info: Option<f64>,
    pub importance: f64,
}

/// Recounts `R`, `I` and `f` from raw caption strings. Out-of-vocabulary
/// words count as `<unk>`; `<pad>`, `<bos>`, `<eos>` are never counted.
pub fn importance_oracle(
    videos: &[(String, Vec<Vec<String>>)],
    known: &[String],
    video: usize,
    word: &str,
    gamma: f64,
) -> OracleEntry {
    let structural = ["<pad>", "<bos>", "<eos>"];
    let contains = |caption: &Vec<String>| -> bool {
        caption.iter().any(|t| {
            let mapped = if known.contains(t) { t.as_str() } else { "<unk>" };
            mapped == word
        })
    };
    let captions = &videos[video].1;
    let hits = captions.iter().filter(|c| contains(c)).count();
    let relevance = hits as f64 / captions.len() as f64;
    let present = videos.iter().filter(|(_, cs)| cs.iter().any(|c| contains(c))).count();
    let info = if structural.contains(&word) || present == 0 {
        None
    } else {
        Some((videos.len() as f64 / present as f64).ln())
    };
    let importance = match info {
        Some(i) => relevance.powf(gamma) * i,
        None => 0.0,
    };
    OracleEntry {
        relevance,
        info,
        importance,
    }
}

/// Random corpus with Zipf-like word frequencies, as TSV text.
pub fn zipf_corpus_tsv(seed: u64, videos: usize, max_captions: usize, words: usize) -> String {
    let r = &mut rng(seed);
    let weights: Vec<f64> = (1..=words).map(|k| 1.0 / k as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut out = String::new();
    for v in 0..videos {
        for _ in 0..r.random_range(1..=max_captions) {
            let len = r.random_range(1..7);
            let caption: Vec<String> = (0..len)
                .map(|_| {
                    let mut u = r.random_range(0.0..total);
                    let mut k = 0;
                    while u >= weights[k] && k + 1 < words {
                        u -= weights[k];
                        k += 1;
                    }
                    format!("w{k}")
                })
                .collect();
            out.push_str(&format!("v{v:02}\t{}\n", caption.join(" ")));
        }
    }
    out
}

pub mod model {
    use std::collections::BTreeMap;

    use infoloss::captioner::{forward_teacher_forced, ModelDims, ModelParams, Mode};
    use infoloss::corpus::{build_vocabulary, encode_caption, parse_corpus, CaptionCorpus, CorpusFormat, Vocabulary};
    use infoloss::features::{synthesize_features, FeatureConfig, VideoFeatures};
    use infoloss::importance::{build_importance_table, ImportanceTable};
    use infoloss::ndcore::Graph;
    use infoloss::objective::information_loss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub struct Tiny {
        pub corpus: CaptionCorpus,
        pub vocab: Vocabulary,
        pub features: BTreeMap<String, VideoFeatures>,
        pub table: ImportanceTable,
        pub dims: ModelDims,
    }

    /// Three videos over seven words (vocabulary of 11 with the specials),
    /// `n = 3` frames of `k = 2` regions, every feature width 4, H = E = 8.
    pub fn tiny(seed: u64) -> Tiny {
        let text = "va\ta dog runs fast\nva\ta dog runs\nvb\ta cat sits\nvb\tthe cat sits fast\nvc\tthe dog sits\n";
        let corpus = parse_corpus(text, CorpusFormat::Tsv).unwrap();
        let vocab = build_vocabulary(&corpus, 1);
        assert_eq!(vocab.len(), 11);
        let fc = FeatureConfig {
            n_frames: 3,
            k_objects: 2,
            d_object: 4,
            d_frame: 4,
            d_clip: 4,
        };
        let features = synthesize_features(&corpus, &fc, seed).unwrap();
        let table = build_importance_table(&corpus, &vocab, 2.0).unwrap();
        let dims = ModelDims::new(8, 8, 8, &fc, vocab.len());
        Tiny {
            corpus,
            vocab,
            features,
            table,
            dims,
        }
    }

    pub fn init(dims: &ModelDims, seed: u64) -> ModelParams {
        ModelParams::init(dims.clone(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// `[BOS, w1, w2, w3, EOS]`: four predicted positions.
    pub fn target(t: &Tiny) -> Vec<usize> {
        let caption = &t.corpus.video("va").unwrap().captions[1];
        let target = encode_caption(caption, &t.vocab);
        assert_eq!(target.len(), 5);
        target
    }

    fn loss(t: &Tiny, params: &ModelParams, target: &[usize], lambda: f64, backward: bool) -> (f64, Option<infoloss::ndcore::Gradients>) {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fw = forward_teacher_forced(&mut g, &t.features["va"], target, &bound, params.dims(), &mut Mode::Eval).unwrap();
        let l = information_loss(&mut g, fw.logits, &target[1..], "va", &t.table, lambda).unwrap();
        let v = g.scalar_value(l);
        (v, backward.then(|| g.backward(l).unwrap()))
    }

    /// Worst relative error over every parameter entry, and the number of
    /// entries checked.
    pub fn gradient_check(t: &Tiny, params: &ModelParams, lambda: f64, h: f64, floor: f64) -> (f64, usize, String) {
        let target = target(t);
        let (_, grads) = loss(t, params, &target, lambda, true);
        let grads = grads.unwrap();
        let mut worst = (0.0f64, String::new());
        let mut checked = 0;
        for name in params.names().map(String::from).collect::<Vec<_>>() {
            let len = params.get(&name).unwrap().len();
            for j in 0..len {
                let mut p = params.clone();
                p.get_mut(&name).unwrap().data_mut()[j] += h;
                let (up, _) = loss(t, &p, &target, lambda, false);
                p.get_mut(&name).unwrap().data_mut()[j] -= 2.0 * h;
                let (down, _) = loss(t, &p, &target, lambda, false);
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[&name].data()[j];
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
                if err > worst.0 {
                    worst = (err, format!("{name}[{j}]: analytic {analytic:e} numeric {numeric:e}"));
                }
                checked += 1;
            }
        }
        (worst.0, checked, worst.1)
    }
}
