//! Cluster-contiguous store: round trips and read accounting.

use clusd_core::cluster::{kmeans_fit, ClusterModel};
use clusd_core::corpus::{Corpus, DenseVector, Document, SparseVector};
use clusd_core::storage::{record_size, write_store, DiskStore, DEFAULT_PER_OP_OVERHEAD};
use clusd_core::Error;
use proptest::prelude::*;

fn fixture(n: usize, dim: usize, clusters: usize) -> (Corpus, ClusterModel) {
    let docs = (0..n as u32)
        .map(|i| Document {
            doc_id: i,
            sparse: SparseVector::default(),
            dense: DenseVector::new(
                (0..dim)
                    .map(|j| ((i as usize * 7 + j * 13) % 29) as f32 / 29.0 - 0.5)
                    .collect(),
            )
            .unwrap(),
        })
        .collect();
    let corpus = Corpus::new(dim, docs).unwrap();
    let model = kmeans_fit(&corpus, clusters, 6, 5).unwrap();
    (corpus, model)
}

fn open_fixture(
    n: usize,
    dim: usize,
    clusters: usize,
) -> (Corpus, ClusterModel, DiskStore, tempfile::TempDir) {
    let (corpus, model) = fixture(n, dim, clusters);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.clss");
    write_store(&corpus, &model, &path).unwrap();
    let store = DiskStore::open(&path).unwrap();
    (corpus, model, store, dir)
}

#[test]
fn every_cluster_reads_back_its_members_and_vectors() {
    let (corpus, model, mut store, _dir) = open_fixture(250, 5, 9);
    assert_eq!(store.num_clusters(), 9);
    assert_eq!(store.num_docs(), 250);
    store.check_compatible(&model).unwrap();
    let all: Vec<u32> = (0..9).collect();
    let (blocks, _) = store.fetch_clusters(&all).unwrap();
    for block in &blocks {
        assert_eq!(block.doc_ids, model.members(block.cluster_id));
        for (d, v) in block.rows() {
            assert_eq!(v, corpus.dense(d));
        }
    }
    let (ids, vecs) = store.read_all().unwrap();
    assert_eq!(ids.len(), 250);
    assert_eq!(vecs.len(), 250 * 5);
}

#[test]
fn consecutive_clusters_share_one_read() {
    let (_, _, mut store, _dir) = open_fixture(300, 4, 10);
    let (_, stats) = store.fetch_clusters(&[2, 3, 4, 7]).unwrap();
    assert_eq!(stats.read_ops, 2);
    let expected: u64 = [2usize, 3, 4, 7]
        .iter()
        .map(|&c| store.directory()[c].length)
        .sum();
    assert_eq!(stats.bytes_read, expected);
    assert_eq!(stats.simulated_overhead, 2.0 * DEFAULT_PER_OP_OVERHEAD);
}

#[test]
fn blocks_follow_the_requested_order() {
    let (_, _, mut store, _dir) = open_fixture(120, 3, 6);
    let (blocks, _) = store.fetch_clusters(&[5, 0, 3]).unwrap();
    assert_eq!(
        blocks.iter().map(|b| b.cluster_id).collect::<Vec<_>>(),
        vec![5, 0, 3]
    );
}

#[test]
fn uncoalesced_document_reads_cost_one_operation_each() {
    let (corpus, model, mut store, _dir) = open_fixture(200, 4, 5);
    let members = model.members(1).to_vec();
    store.set_coalescing(false);
    let (_, vecs, stats) = store.fetch_documents(&members).unwrap();
    assert_eq!(stats.read_ops, members.len() as u64);
    assert_eq!(stats.bytes_read, members.len() as u64 * record_size(4));
    for (i, &d) in members.iter().enumerate() {
        assert_eq!(&vecs[i * 4..(i + 1) * 4], corpus.dense(d));
    }
    store.set_coalescing(true);
    let (_, again, stats) = store.fetch_documents(&members).unwrap();
    assert_eq!(stats.read_ops, 1);
    assert_eq!(again, vecs);
}

#[test]
fn unknown_ids_are_rejected() {
    let (_, _, mut store, _dir) = open_fixture(50, 2, 4);
    assert!(matches!(
        store.fetch_clusters(&[4]),
        Err(Error::UnknownId { .. })
    ));
    assert!(matches!(
        store.fetch_documents(&[50]),
        Err(Error::UnknownId { .. })
    ));
}

#[test]
fn truncated_files_fail_to_open() {
    let (corpus, model) = fixture(40, 3, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.clss");
    write_store(&corpus, &model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(DiskStore::open(&path).is_err());
    std::fs::write(&path, b"XXXX").unwrap();
    assert!(DiskStore::open(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn accounting_identity_holds_for_any_request(
        request in prop::collection::vec(0u32..8, 0..12),
        docs in prop::collection::vec(0u32..160, 0..30),
        overhead in 1e-5f64..1e-2,
    ) {
        let (_, _, mut store, _dir) = open_fixture(160, 3, 8);
        store.set_per_op_overhead(overhead);
        let (_, a) = store.fetch_clusters(&request).unwrap();
        let (_, _, b) = store.fetch_documents(&docs).unwrap();
        for s in [a, b, *store.stats()] {
            prop_assert_eq!(s.simulated_overhead, s.read_ops as f64 * overhead);
        }
        let mut distinct = request.clone();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert!(a.read_ops <= distinct.len() as u64);
    }
}
