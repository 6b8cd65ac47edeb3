use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};

use nearmem::coordinator::{serve_clients, ClusterConfig, PayloadWriter, SearchClient};
use nearmem::dataset::{Dataset, DatasetSpec, Distribution};
use nearmem::error::{Error, Result};
use nearmem::ivf::{default_nlist, read_quantizer, train_ivf, IvfIndex};
use nearmem::kmeans::KMeansParams;
use nearmem::memnode::{self, placement_offsets, read_frequency_histogram, shard_partition_with_offsets, Selection, Shard};
use nearmem::oracle::{exact_knn, recall1_at_k, recall_at_k, GroundTruth};
use nearmem::perfmodel::{percentile, scale_latency, ScalingInputs, Scenario};
use nearmem::pq::{train_pq, PqTrainParams};
use nearmem::ralm::{self, GenerationConfig, InferenceLatency, SeededSource, TraceSource, VectorSource};

#[derive(Parser)]
#[command(name = "nearmem", version, about = "Distributed IVF-PQ vector search on disaggregated memory nodes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    Gaussian,
    Clustered,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic CVEC dataset.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, value_enum, default_value = "gaussian")]
        dist: Dist,
        #[arg(long, default_value_t = 64)]
        clusters: usize,
        #[arg(long, default_value_t = 0.5)]
        spread: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Draw this many extra vectors from the same distribution into `--holdout-out`.
        #[arg(long, default_value_t = 0, requires = "holdout_out")]
        holdout: usize,
        #[arg(long)]
        holdout_out: Option<PathBuf>,
    },
    /// Train the coarse quantizer and PQ codebook, then encode the dataset.
    Build {
        #[arg(long)]
        data: PathBuf,
        /// Defaults to sqrt(N) rounded to a power of two.
        #[arg(long)]
        nlist: Option<usize>,
        #[arg(long, default_value_t = 16)]
        m: usize,
        #[arg(long, default_value_t = 256)]
        ksub: usize,
        #[arg(long, default_value_t = 25)]
        iters: usize,
        /// Train both quantizers on at most this many vectors.
        #[arg(long)]
        train_sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        /// Also write a payload store with one text chunk per vector.
        #[arg(long)]
        payloads: Option<PathBuf>,
    },
    /// Split an index into per-node shard files.
    Shard {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long, default_value_t = 1)]
        nodes: usize,
        #[arg(long, default_value_t = 4)]
        channels: usize,
        /// `list_id,count` access histogram for frequency-aware placement.
        #[arg(long)]
        frequency: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Serve one shard as a memory node.
    ServeMem {
        #[arg(long)]
        shard: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7100")]
        addr: String,
        #[arg(long, default_value_t = 0.99)]
        ahpq_target: f64,
        /// Untruncated level-one queues.
        #[arg(long)]
        exact: bool,
    },
    /// Serve clients, fanning out to the memory nodes in the config.
    ServeCoord {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7000")]
        addr: String,
    },
    /// Query the coordinator for every vector in a CVEC file.
    Query {
        #[arg(long)]
        coord: String,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 32)]
        nprobe: usize,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure batched query latency against the coordinator.
    Bench {
        #[arg(long)]
        coord: String,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
        batch: Vec<usize>,
        #[arg(long, default_value_t = 256)]
        count: usize,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 32)]
        nprobe: usize,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact ground truth by linear scan.
    Truth {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// R@K and R1@K of a query results CSV.
    Recall {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
    },
    /// Accelerator-ratio sweep (and optional node-count sweep) from a scenario file.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        scaling_out: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the mock generation workload against the coordinator.
    Drive {
        #[arg(long)]
        coord: String,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 1)]
        interval: u32,
        #[arg(long, default_value_t = 512)]
        seq_len: u32,
        #[arg(long, default_value_t = 1)]
        batch: u32,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 32)]
        nprobe: usize,
        #[arg(long, default_value_t = 10.0)]
        inference_ms: f64,
        #[arg(long)]
        sleep: bool,
        /// Replay query vectors from a CVEC file instead of a seeded stream.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
        /// Directory for per-sequence trace CSVs.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn connect(coord: &str, index: &Path, timeout_ms: u64) -> Result<SearchClient> {
    let q = read_quantizer(index)?;
    Ok(SearchClient::connect(coord, Duration::from_millis(timeout_ms))?.with_quantizer(q))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen { n, dim, dist, clusters, spread, seed, out, holdout, holdout_out } => {
            let distribution = match dist {
                Dist::Uniform => Distribution::Uniform,
                Dist::Gaussian => Distribution::Gaussian,
                Dist::Clustered => Distribution::Clustered { clusters, spread },
            };
            let mut ds = DatasetSpec { n: n + holdout, dim, distribution, seed }.generate()?;
            let held = Dataset { dim, data: ds.data.split_off(n * dim) };
            ds.save(out)?;
            match holdout_out {
                Some(p) => held.save(p),
                None => Ok(()),
            }
        }
        Cmd::Build { data, nlist, m, ksub, iters, train_sample, seed, index, codebook, payloads } => {
            let ds = Dataset::load(data)?;
            let nlist = nlist.unwrap_or_else(|| default_nlist(ds.len()));
            let t = Instant::now();
            let km = KMeansParams { k: nlist, max_iters: iters, seed, max_train_points: train_sample };
            let quantizer = train_ivf(&ds.data, ds.dim, &km)?;
            eprintln!("coarse quantizer: {nlist} lists in {:.1}s", t.elapsed().as_secs_f64());
            // PQ trains on residuals so the codes match what the index stores.
            let residuals: Vec<f32> = ds
                .rows()
                .map(|v| quantizer.assign(v).map(|l| quantizer.residual(v, l as usize)))
                .collect::<Result<Vec<_>>>()?
                .concat();
            let pq = PqTrainParams { m, ksub, kmeans_iters: iters, seed: seed.wrapping_add(1), max_train_points: train_sample };
            let cb = train_pq(&residuals, ds.dim, &pq)?;
            eprintln!("codebook: m={m} ksub={ksub} in {:.1}s", t.elapsed().as_secs_f64());
            let ids: Vec<u64> = (0..ds.len() as u64).collect();
            let idx = IvfIndex::build(quantizer, cb, &ids, &ds.data)?;
            idx.save(&index, &codebook)?;
            if let Some(p) = payloads {
                let mut w = PayloadWriter::create(p)?;
                for id in ids {
                    w.put(id, format!("chunk-{id}").as_bytes())?;
                }
                w.finish()?;
            }
            eprintln!("indexed {} vectors in {:.1}s", idx.len(), t.elapsed().as_secs_f64());
            Ok(())
        }
        Cmd::Shard { index, codebook, nodes, channels, frequency, out_dir } => {
            let idx = IvfIndex::load(index, codebook)?;
            let offsets = match frequency {
                Some(f) => placement_offsets(&idx, nodes, channels, &read_frequency_histogram(f, idx.nlist())?)?,
                None => vec![0; idx.nlist()],
            };
            fs::create_dir_all(&out_dir)?;
            for s in shard_partition_with_offsets(&idx, nodes, channels, &offsets)? {
                let path = out_dir.join(format!("shard_{}.cshd", s.node_id()));
                s.save(&path)?;
                eprintln!("{}: {} entries", path.display(), s.len());
            }
            Ok(())
        }
        Cmd::ServeMem { shard, addr, ahpq_target, exact } => {
            let shard = Shard::load(shard)?;
            let selection = Selection::from_flags(exact, ahpq_target);
            selection.ahpq_config(100, shard.num_channels())?;
            let h = memnode::serve(shard, addr.as_str(), selection)?;
            eprintln!("memory node listening on {}", h.local_addr());
            h.wait();
            Ok(())
        }
        Cmd::ServeCoord { config, addr } => {
            let cfg = ClusterConfig::load(config)?;
            let h = serve_clients(&cfg, addr.as_str())?;
            eprintln!("coordinator listening on {} for {} nodes", h.local_addr(), cfg.nodes.len());
            h.wait();
            Ok(())
        }
        Cmd::Query { coord, index, queries, k, nprobe, timeout_ms, out } => {
            let client = connect(&coord, &index, timeout_ms)?;
            let qs = Dataset::load(queries)?;
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            w.write_record(["query", "rank", "id", "distance"]).map_err(csv_io)?;
            for (qi, q) in qs.rows().enumerate() {
                let resp = client.search(q, nprobe, k, false)?;
                for (rank, n) in resp.entries.iter().enumerate() {
                    w.write_record([qi.to_string(), rank.to_string(), n.id.to_string(), n.distance.to_string()])
                        .map_err(csv_io)?;
                }
            }
            w.flush()?;
            Ok(())
        }
        Cmd::Bench { coord, index, queries, batch, count, k, nprobe, timeout_ms, out } => {
            let client = Arc::new(connect(&coord, &index, timeout_ms)?);
            let qs = Dataset::load(queries)?;
            if qs.is_empty() {
                return Err(Error::Input("query file is empty".into()));
            }
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            w.write_record(["batch", "queries", "median_ms", "p99_ms", "qps"]).map_err(csv_io)?;
            for &b in &batch {
                let b = b.max(1);
                let rounds = count.div_ceil(b).max(1);
                let mut lat = Vec::with_capacity(rounds);
                let start = Instant::now();
                for r in 0..rounds {
                    let t = Instant::now();
                    std::thread::scope(|s| -> Result<()> {
                        let hs: Vec<_> = (0..b)
                            .map(|j| {
                                let q = qs.row((r * b + j) % qs.len());
                                let client = &client;
                                s.spawn(move || client.search(q, nprobe, k, false).map(|_| ()))
                            })
                            .collect();
                        hs.into_iter().try_for_each(|h| h.join().expect("bench thread panicked"))
                    })?;
                    lat.push(t.elapsed().as_secs_f64() * 1e3);
                }
                let wall = start.elapsed().as_secs_f64();
                lat.sort_by(f64::total_cmp);
                w.write_record([
                    b.to_string(),
                    (rounds * b).to_string(),
                    format!("{:.4}", percentile(&lat, 0.5)),
                    format!("{:.4}", percentile(&lat, 0.99)),
                    format!("{:.2}", (rounds * b) as f64 / wall),
                ])
                .map_err(csv_io)?;
            }
            w.flush()?;
            Ok(())
        }
        Cmd::Truth { data, queries, k, out } => {
            let db = Dataset::load(data)?;
            let qs = Dataset::load(queries)?;
            if db.dim != qs.dim {
                return Err(Error::Config("database and queries differ in dimension".into()));
            }
            exact_knn(&db.data, &qs.data, db.dim, k)?.save(out)
        }
        Cmd::Recall { results, truth, k } => {
            let gt = GroundTruth::load(truth)?;
            let mut per_query = vec![Vec::new(); gt.ids.len()];
            let mut r = csv::Reader::from_path(results).map_err(csv_io)?;
            for rec in r.records() {
                let rec = rec.map_err(csv_io)?;
                let field = |i: usize| rec.get(i).ok_or_else(|| Error::Input("short results row".into()));
                let q: usize = field(0)?.parse().map_err(|_| Error::Input("bad query index".into()))?;
                let id: u64 = field(2)?.parse().map_err(|_| Error::Input("bad id".into()))?;
                per_query
                    .get_mut(q)
                    .ok_or_else(|| Error::Input(format!("query {q} beyond ground truth")))?
                    .push(id);
            }
            let r_at_k = recall_at_k(&per_query, &gt, k)?;
            let r1 = recall1_at_k(&per_query, &gt)?;
            println!("{}", serde_json::json!({ "queries": per_query.len(), "k": k, "recall_at_k": r_at_k, "recall1_at_k": r1 }));
            Ok(())
        }
        Cmd::Plan { scenario, out, scaling_out, trials, seed } => {
            let sc = Scenario::from_json(&fs::read_to_string(scenario)?)?;
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            for row in sc.sweep()? {
                w.serialize(row).map_err(csv_io)?;
            }
            w.flush()?;
            if let (Some(path), Some(pool)) = (scaling_out, sc.latency_pool_ms.as_ref()) {
                let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
                w.write_record(["nodes", "median_ms", "p99_ms", "overhead_ms"]).map_err(csv_io)?;
                for &n in sc.nodes.as_deref().unwrap_or(&[1, 2, 4, 8, 16, 32]) {
                    let s = scale_latency(&ScalingInputs { pool_ms: pool.clone(), nodes: n, hop_latency_us: sc.hop_latency_us, trials, seed })?;
                    w.write_record([n.to_string(), s.median_ms.to_string(), s.p99_ms.to_string(), s.overhead_ms.to_string()])
                        .map_err(csv_io)?;
                }
                w.flush()?;
            }
            Ok(())
        }
        Cmd::Drive { coord, index, interval, seq_len, batch, k, nprobe, inference_ms, sleep, trace, seed, timeout_ms, out_dir } => {
            let client = connect(&coord, &index, timeout_ms)?;
            let dim = client.quantizer().map_or(0, |q| q.dim());
            let source: Box<dyn VectorSource> = match trace {
                Some(p) => Box::new(TraceSource { vectors: Dataset::load(p)?, seq_len }),
                None => Box::new(SeededSource { dim, seed }),
            };
            let cfg = GenerationConfig {
                interval,
                seq_len,
                batch,
                k,
                nprobe,
                inference: InferenceLatency::Constant { ms: inference_ms },
                simulate_sleep: sleep,
                request_payloads: false,
            };
            let traces = ralm::generate(&cfg, &client, source.as_ref())?;
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir)?;
                for t in &traces {
                    t.write_csv(File::create(dir.join(format!("trace_{}.csv", t.sequence)))?)?;
                }
            }
            let report = ralm::summarize(&traces)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?);
            match traces.iter().find_map(|t| t.error.clone()) {
                Some(e) => Err(Error::NodeUnavailable { node: coord, reason: e }),
                None => Ok(()),
            }
        }
    }
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Input(format!("csv: {other:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
