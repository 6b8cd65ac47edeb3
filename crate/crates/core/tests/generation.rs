mod common;

use std::time::Duration;

use nearmem::coordinator::{serve_clients, ClusterConfig, SearchClient};
use nearmem::memnode::{self, shard_partition, Selection};
use nearmem::ralm::{generate, summarize, GenerationConfig, InferenceLatency, SeededSource};

#[test]
fn generation_against_live_cluster() {
    let s = common::small(2000, 0, 8, 8, 2, 1);
    let nodes: Vec<_> = shard_partition(&s.index, 2, 2)
        .unwrap()
        .into_iter()
        .map(|sh| memnode::serve(sh, "127.0.0.1:0", Selection::default()).unwrap())
        .collect();
    let coord = serve_clients(&ClusterConfig::new(nodes.iter().map(|h| h.local_addr().to_string()).collect()), "127.0.0.1:0").unwrap();
    let client = SearchClient::connect(&coord.local_addr().to_string(), Duration::from_secs(10))
        .unwrap()
        .with_quantizer(s.index.quantizer().clone());

    let mut cfg = GenerationConfig::new(64, 512);
    cfg.batch = 3;
    cfg.k = 5;
    cfg.nprobe = 2;
    cfg.inference = InferenceLatency::Constant { ms: 2.0 };
    let traces = generate(&cfg, &client, &SeededSource { dim: 8, seed: 4 }).unwrap();
    assert_eq!(traces.len(), 3);
    for t in &traces {
        assert!(t.error.is_none());
        assert_eq!(t.steps.len(), 512);
        let retrieval: Vec<u32> = t.steps.iter().filter(|r| !r.retrieved_ids.is_empty()).map(|r| r.step).collect();
        assert_eq!(retrieval, (0..8).map(|i| i * 64).collect::<Vec<_>>());
        assert_eq!(t.retrieval_steps(), 8);
        for r in t.steps.iter().filter(|r| r.step % 64 == 0) {
            assert_eq!(r.retrieved_ids.len(), 5);
            assert!(r.retrieval_ms > 0.0);
        }
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step,phase,latency_ms,ids\n"));
        assert_eq!(text.lines().filter(|l| l.contains(",retrieval,")).count(), 8);
    }
    let report = summarize(&traces).unwrap();
    assert_eq!(report.tokens, 3 * 512);
    assert_eq!(report.aborted_sequences, 0);
    assert_eq!(report.retrieval_steps.unwrap().count, 24);
    // Inference alone accounts for 512 × 2 ms per sequence.
    assert!(report.wall_ms >= 1024.0);
}
