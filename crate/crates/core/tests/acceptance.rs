//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one `[PASS]`/`[FAIL]` line per criterion; exits non-zero if any fails.
//!
//! `cargo test -p nearmem --test acceptance`

use std::io::Write;
use std::net::{Shutdown, TcpStream};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Pareto};

use nearmem::coordinator::{merge_results, serve_clients, ClusterConfig, SearchClient};
use nearmem::dataset::{DatasetSpec, Distribution};
use nearmem::ivf::{train_ivf, IvfIndex};
use nearmem::kmeans::KMeansParams;
use nearmem::kselect::{ahpq_run, exact_top_k, size_l1_queue, AhpqConfig, Neighbor};
use nearmem::memnode::{self, node_query, shard_partition, Selection, Shard};
use nearmem::net::ServerHandle;
use nearmem::oracle::{exact_knn, exact_pq_search, recall1_at_k, recall_at_k, GroundTruth};
use nearmem::perfmodel::{network_overhead_ms, optimal_ratio, percentile, scale_latency, system_throughput, ScalingInputs, ThroughputInputs};
use nearmem::pq::{train_pq, PqTrainParams};
use nearmem::protocol::{self, ErrorCode, Message, QueryMessage, MAX_FRAME_LEN};

const N: usize = 100_000;
const NQ: usize = 2_000;
const DIM: usize = 128;
const NLIST: usize = 1024;
const M: usize = 16;
const KSUB: usize = 256;
const NPROBE: usize = 32;
const K: usize = 100;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Fixture {
    index: IvfIndex,
    queries: Vec<f32>,
    truth: GroundTruth,
}

impl Fixture {
    fn build() -> Fixture {
        let t = Instant::now();
        let spec = DatasetSpec { n: N + NQ, dim: DIM, distribution: Distribution::Clustered { clusters: 2000, spread: 0.6 }, seed: 7 };
        let mut all = spec.generate().expect("generate").data;
        let queries = all.split_off(N * DIM);
        let base = all;

        let km = KMeansParams { k: NLIST, max_iters: 8, seed: 11, max_train_points: Some(24 * NLIST) };
        let quantizer = train_ivf(&base, DIM, &km).expect("train ivf");
        let mut residuals = Vec::with_capacity(base.len());
        for v in base.chunks_exact(DIM) {
            let l = quantizer.assign(v).unwrap() as usize;
            residuals.extend(quantizer.residual(v, l));
        }
        let pq = PqTrainParams { m: M, ksub: KSUB, kmeans_iters: 10, seed: 12, max_train_points: Some(20_000) };
        let codebook = train_pq(&residuals, DIM, &pq).expect("train pq");
        drop(residuals);
        let ids: Vec<u64> = (0..N as u64).collect();
        let index = IvfIndex::build(quantizer, codebook, &ids, &base).expect("build index");
        let truth = exact_knn(&base, &queries, DIM, K).expect("ground truth");
        println!("fixture: {N} x {DIM}, nlist={NLIST}, m={M}, {NQ} queries, built in {:.1}s", t.elapsed().as_secs_f64());
        Fixture { index, queries, truth }
    }

    fn query(&self, i: usize) -> &[f32] {
        &self.queries[i * DIM..(i + 1) * DIM]
    }
}

fn in_process_search(shards: &[Shard], f: &Fixture, qi: usize, selection: Selection) -> Vec<Neighbor> {
    let q = f.query(qi);
    let lists = f.index.quantizer().scan(q, NPROBE).unwrap().list_ids;
    let per_node: Vec<_> = shards
        .iter()
        .map(|s| node_query(s, qi as u64, q, &lists, K, selection).unwrap().entries)
        .collect();
    merge_results(per_node.iter().map(Vec::as_slice), K).unwrap()
}

fn ids(v: &[Neighbor]) -> Vec<u64> {
    v.iter().map(|n| n.id).collect()
}

/// Criteria 1 and 2 share one pass over the queries.
fn ahpq_vs_exact(f: &Fixture) -> (Verdict, Verdict) {
    let shards = shard_partition(&f.index, 2, 4).unwrap();
    let l1 = size_l1_queue(K, 8, 0.99).unwrap();
    let approx = Selection::Approximate { target_prob: 0.99 };
    let mut differ = 0usize;
    let mut exact_ids = Vec::with_capacity(NQ);
    let mut approx_ids = Vec::with_capacity(NQ);
    for qi in 0..NQ {
        let e = ids(&in_process_search(&shards, f, qi, Selection::Exact));
        let a = ids(&in_process_search(&shards, f, qi, approx));
        differ += usize::from(e != a);
        exact_ids.push(e);
        approx_ids.push(a);
    }
    let rate = differ as f64 / NQ as f64;
    let c1 = verdict(rate <= 0.015, format!("L1_len={l1}, {differ}/{NQ} queries differ from exact mode ({:.2}% <= 1.5%)", rate * 100.0));

    let r_e = recall_at_k(&exact_ids, &f.truth, K).unwrap();
    let r_a = recall_at_k(&approx_ids, &f.truth, K).unwrap();
    let r1_e = recall1_at_k(&exact_ids, &f.truth).unwrap();
    let r1_a = recall1_at_k(&approx_ids, &f.truth).unwrap();
    let d_r = (r_e - r_a).abs() * 100.0;
    let d_r1 = (r1_e - r1_a).abs() * 100.0;
    let c2 = verdict(
        d_r <= 0.5 && d_r1 <= 0.5,
        format!(
            "R@100 exact {:.3}% vs ahpq {:.3}% (d={d_r:.3}pp); R1@100 exact {:.2}% vs ahpq {:.2}% (d={d_r1:.3}pp); bound 0.5pp",
            r_e * 100.0,
            r_a * 100.0,
            r1_e * 100.0,
            r1_a * 100.0
        ),
    );
    (c1, c2)
}

struct Deployment {
    nodes: Vec<ServerHandle>,
    coord: ServerHandle,
}

impl Deployment {
    fn start(index: &IvfIndex, num_nodes: usize, channels: usize) -> Deployment {
        let nodes: Vec<ServerHandle> = shard_partition(index, num_nodes, channels)
            .unwrap()
            .into_iter()
            .map(|s| memnode::serve(s, "127.0.0.1:0", Selection::Exact).unwrap())
            .collect();
        let mut cfg = ClusterConfig::new(nodes.iter().map(|h| h.local_addr().to_string()).collect());
        cfg.timeout_ms = 30_000;
        let coord = serve_clients(&cfg, "127.0.0.1:0").unwrap();
        Deployment { nodes, coord }
    }

    fn shutdown(self) {
        self.coord.shutdown();
        for n in self.nodes {
            n.shutdown();
        }
    }
}

fn distributed_equivalence(f: &Fixture) -> Verdict {
    const QUERIES: usize = 1_000;
    let mut reference: Option<Vec<Vec<(u64, u32)>>> = None;
    let mut configs = 0;
    for nodes in [1, 2, 4] {
        for channels in [1, 4] {
            let d = Deployment::start(&f.index, nodes, channels);
            let client = SearchClient::connect(&d.coord.local_addr().to_string(), Duration::from_secs(30))
                .unwrap()
                .with_quantizer(f.index.quantizer().clone());
            let out: Vec<Vec<(u64, u32)>> = (0..QUERIES)
                .map(|qi| {
                    let r = client.search(f.query(qi), NPROBE, K, false).unwrap();
                    r.entries.iter().map(|n| (n.id, n.distance.to_bits())).collect()
                })
                .collect();
            drop(client);
            d.shutdown();
            match &reference {
                None => reference = Some(out),
                Some(r) if *r != out => {
                    let bad = r.iter().zip(&out).filter(|(a, b)| a != b).count();
                    return verdict(false, format!("{nodes} nodes x {channels} channels: {bad}/{QUERIES} queries differ"));
                }
                Some(_) => {}
            }
            configs += 1;
        }
    }
    // The common answer must also be the sort-everything oracle.
    let reference = reference.unwrap();
    let oracle_mismatch = (0..QUERIES)
        .filter(|&qi| {
            let o: Vec<(u64, u32)> = exact_pq_search(&f.index, f.query(qi), NPROBE, K)
                .unwrap()
                .iter()
                .map(|n| (n.id, n.distance.to_bits()))
                .collect();
            o != reference[qi]
        })
        .count();
    verdict(
        oracle_mismatch == 0,
        format!("{configs} configurations bit-identical over {QUERIES} queries; {oracle_mismatch} differ from the exact PQ oracle"),
    )
}

fn adc_oracle(f: &Fixture) -> Verdict {
    let cb = f.index.codebook();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let residual: Vec<f32> = (0..DIM).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
        let code: Vec<u8> = (0..M).map(|_| rng.gen_range(0..KSUB) as u8).collect();
        let adc = cb.build_lut(&residual).unwrap().adc_distance(&code).unwrap() as f64;
        let recon = cb.reconstruct(&code).unwrap();
        let direct: f64 = residual.iter().zip(&recon).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
        worst = worst.max((adc - direct).abs() / direct.max(1.0));
    }
    verdict(worst <= 1e-5, format!("max relative error {worst:.3e} over 10000 pairs (<= 1e-5)"))
}

fn queue_sizing() -> Verdict {
    const TRIALS: usize = 100_000;
    let mut lines = Vec::new();
    let mut pass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (k, q) in [(100usize, 16usize), (100, 8), (10, 4)] {
        let l = size_l1_queue(k, q, 0.99).unwrap();
        let cfg = AhpqConfig { k, num_queue: q, l1_len: l, target_prob: 0.99 };
        let items = 8 * k;
        let mut streams: Vec<Vec<(f32, u64)>> = vec![Vec::with_capacity(items); q];
        let mut flat = Vec::with_capacity(items);
        let mut misses = 0usize;
        for _ in 0..TRIALS {
            streams.iter_mut().for_each(Vec::clear);
            flat.clear();
            for id in 0..items as u64 {
                let d: f32 = rng.gen();
                streams[rng.gen_range(0..q)].push((d, id));
                flat.push((d, id));
            }
            let got = ahpq_run(&cfg, &streams).unwrap();
            misses += usize::from(got != exact_top_k(flat.iter().copied(), k));
        }
        let rate = misses as f64 / TRIALS as f64;
        let bound = 0.01 + 3.0 * (0.01f64 * 0.99 / TRIALS as f64).sqrt();
        pass &= rate <= bound;
        lines.push(format!("K={k},q={q}: L={l} miss {:.4}% (<= {:.4}%)", rate * 100.0, bound * 100.0));
    }
    let l16 = size_l1_queue(100, 16, 0.99).unwrap();
    pass &= l16 <= 20;
    verdict(pass, lines.join("; "))
}

fn nprobe_monotonicity(f: &Fixture) -> Verdict {
    let mut recalls = Vec::new();
    for nprobe in [1usize, 2, 4, 8, 16, 32] {
        let res: Vec<Vec<u64>> = (0..NQ).map(|qi| ids(&exact_pq_search(&f.index, f.query(qi), nprobe, K).unwrap())).collect();
        recalls.push((nprobe, recall_at_k(&res, &f.truth, K).unwrap()));
    }
    let pass = recalls.windows(2).all(|w| w[1].1 >= w[0].1);
    let shown: Vec<String> = recalls.iter().map(|(p, r)| format!("{p}:{:.2}%", r * 100.0)).collect();
    verdict(pass, format!("R@100 by nprobe {}", shown.join(" ")))
}

fn throughput_model() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = 0usize;
    for table in 0..200 {
        let total = rng.gen_range(2..=64u32);
        let b = [1u32, 4, 16, 64][table % 4];
        let li = rng.gen_range(1.0..200.0f64);
        let lr = rng.gen_range(0.1..100.0f64);
        let mut last_frac = 0.0;
        for i in 1..=64u32 {
            let best = optimal_ratio(total, i, b, li, lr).unwrap();
            for n_i in 1..total {
                let th = system_throughput(&ThroughputInputs {
                    interval: i,
                    batch: b,
                    n_inference: n_i,
                    n_retrieval: total - n_i,
                    inference_ms: li,
                    retrieval_ms: lr,
                })
                .unwrap();
                if th.system > best.throughput {
                    return verdict(false, format!("N_I={n_i} beats chosen {} at i={i}, total={total}", best.n_inference));
                }
                checked += 1;
            }
            let frac = best.inference_fraction();
            if frac < last_frac {
                return verdict(false, format!("N_I*/total fell from {last_frac} to {frac} at i={i}, total={total}"));
            }
            last_frac = frac;
        }
    }
    verdict(true, format!("argmax dominates {checked} fixed ratios; N_I*/total non-decreasing in i for 200 latency tables"))
}

fn scalability_model() -> Verdict {
    let nodes = [1u32, 2, 4, 8, 16, 32, 64];
    let flat = vec![5.0f64; 1000];
    let mut exact = true;
    for &n in &nodes {
        let s = scale_latency(&ScalingInputs { pool_ms: flat.clone(), nodes: n, hop_latency_us: 10.0, trials: 2000, seed: 1 }).unwrap();
        exact &= s.median_ms == 5.0 + network_overhead_ms(n, 10.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pareto = Pareto::new(1.0f64, 1.5).unwrap();
    let mut pool: Vec<f64> = (0..10_000).map(|_| pareto.sample(&mut rng).min(10.0)).collect();
    pool.sort_by(f64::total_cmp);
    let pool_p99 = percentile(&pool, 0.99);
    let mut medians = Vec::new();
    let mut tail_ok = true;
    for &n in &nodes {
        let s = scale_latency(&ScalingInputs { pool_ms: pool.clone(), nodes: n, hop_latency_us: 10.0, trials: 20_000, seed: 2 }).unwrap();
        tail_ok &= s.p99_ms <= pool_p99 + network_overhead_ms(n, 10.0) + 1e-12;
        medians.push(s.median_ms);
    }
    let grows = medians.windows(2).all(|w| w[1] >= w[0]) && medians.last() > medians.first();
    verdict(
        exact && grows && tail_ok,
        format!(
            "flat pool median exact: {exact}; heavy-tail medians {} ms; p99 within pool p99 {pool_p99:.3} + overhead: {tail_ok}",
            medians.iter().map(|m| format!("{m:.2}")).collect::<Vec<_>>().join(",")
        ),
    )
}

enum Reply {
    Error(u32),
    Other,
    Closed,
}

/// Writes `bytes`, half-closes, and reads what the service sends back.
fn exchange(addr: &str, bytes: &[u8]) -> std::io::Result<Vec<Reply>> {
    let mut s = TcpStream::connect(addr)?;
    s.set_read_timeout(Some(Duration::from_secs(10)))?;
    s.write_all(bytes)?;
    s.shutdown(Shutdown::Write)?;
    let mut replies = Vec::new();
    loop {
        match protocol::read_frame(&mut s) {
            Ok(Some(body)) => replies.push(match Message::decode(&body) {
                Ok(Message::Error(e)) => Reply::Error(e.code),
                _ => Reply::Other,
            }),
            Ok(None) => {
                replies.push(Reply::Closed);
                return Ok(replies);
            }
            Err(protocol::FrameError::Io(e)) if e.kind() == std::io::ErrorKind::WouldBlock || e.kind() == std::io::ErrorKind::TimedOut => {
                return Err(e)
            }
            Err(_) => {
                replies.push(Reply::Closed);
                return Ok(replies);
            }
        }
    }
}

fn alive(addr: &str, valid: &[u8]) -> bool {
    matches!(exchange(addr, valid).as_deref(), Ok([first, ..]) if !matches!(first, Reply::Closed))
}

fn protocol_robustness(f: &Fixture) -> Verdict {
    let shard = shard_partition(&f.index, 1, 2).unwrap().pop().unwrap();
    let node = memnode::serve(shard, "127.0.0.1:0", Selection::default()).unwrap();
    let node_addr = node.local_addr().to_string();
    let coord = serve_clients(&ClusterConfig::new(vec![node_addr.clone()]), "127.0.0.1:0").unwrap();
    let coord_addr = coord.local_addr().to_string();

    let lists = f.index.quantizer().scan(f.query(0), 4).unwrap().list_ids;
    let valid_node = Message::Query(QueryMessage { query_id: 1, k: 10, query: f.query(0).to_vec(), list_ids: lists.clone() }).encode();
    let valid_client = Message::ClientQuery(protocol::ClientQuery {
        query_id: 1,
        k: 10,
        payload_requested: false,
        query: f.query(0).to_vec(),
        list_ids: lists,
    })
    .encode();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cases = 0usize;
    let mut errors_seen = 0usize;
    for (addr, valid) in [(&node_addr, &valid_node), (&coord_addr, &valid_client)] {
        for case in 0..300 {
            let mut frame = valid.clone();
            let expect_error = match case % 5 {
                // Truncated: cut anywhere after the first byte.
                0 => {
                    frame.truncate(rng.gen_range(1..frame.len()));
                    None
                }
                // Oversized length prefix.
                1 => {
                    frame[..4].copy_from_slice(&rng.gen_range(MAX_FRAME_LEN + 1..=u32::MAX).to_le_bytes());
                    None
                }
                // Unknown message type.
                2 => {
                    frame[4] = loop {
                        let t: u8 = rng.gen();
                        if ![1, 2, 3, 4, 255].contains(&t) {
                            break t;
                        }
                    };
                    Some(ErrorCode::UnknownMessageType as u32)
                }
                // Random bytes in the body, framing intact.
                3 => {
                    for b in frame[5..].iter_mut() {
                        if rng.gen_bool(0.05) {
                            *b = rng.gen();
                        }
                    }
                    None
                }
                // Body shorter than its fields claim.
                _ => {
                    let cut = rng.gen_range(5..frame.len());
                    frame.truncate(cut);
                    frame[..4].copy_from_slice(&((cut - 4) as u32).to_le_bytes());
                    Some(ErrorCode::MalformedFrame as u32)
                }
            };
            // A valid request on the same connection shows whether it stayed open.
            let mut bytes = frame.clone();
            bytes.extend_from_slice(valid);
            let replies = match exchange(addr, &bytes) {
                Ok(r) => r,
                Err(e) => return verdict(false, format!("case {case} on {addr}: service hung ({e})")),
            };
            if let Some(code) = expect_error {
                let ok = matches!(replies.first(), Some(Reply::Error(c)) if *c == code)
                    && matches!(replies.get(1), Some(Reply::Other));
                if !ok {
                    return verdict(false, format!("case {case} on {addr}: expected error {code} then a result"));
                }
            }
            errors_seen += replies.iter().filter(|r| matches!(r, Reply::Error(_))).count();
            if !alive(addr, valid) {
                return verdict(false, format!("case {case} on {addr}: service stopped answering"));
            }
            cases += 1;
        }
    }
    coord.shutdown();
    node.shutdown();
    verdict(true, format!("{cases} fuzzed frames; {errors_seen} error replies; both services kept serving"))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let fixture = Arc::new(Fixture::build());
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let (c1, c2) = ahpq_vs_exact(&fixture);
    results.push((1, "AHPQ exactness rate", c1));
    results.push((2, "recall degradation bound", c2));
    results.push((3, "distributed equivalence", distributed_equivalence(&fixture)));
    results.push((4, "ADC oracle", adc_oracle(&fixture)));
    results.push((5, "queue-sizing soundness", queue_sizing()));
    results.push((6, "recall monotonicity in nprobe", nprobe_monotonicity(&fixture)));
    results.push((7, "throughput model", throughput_model()));
    results.push((8, "scalability model", scalability_model()));
    results.push((9, "protocol robustness", protocol_robustness(&fixture)));

    let mut failed = 0;
    for (n, name, v) in &results {
        println!("[{}] criterion {n}: {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {}/{} passed in {:.1}s", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
