mod oracle;

use proptest::prelude::*;
use slr_core::compress::{
    compression_rate, deserialize, export_csr, factorize_lowrank, from_bytes, pack_sparse, serialize, to_bytes,
    CompressedLayer, LayerMetadata, LowRankFactors, LowRankPart, FORMAT_VERSION,
};
use slr_core::prox::{prox_l21, svt};
use slr_core::tensor::npy::{read_npy, read_npy_i64};
use slr_core::tensor::Matrix;
use slr_core::Error;

fn layer(seed: u64, n: usize, m: usize, rank: usize) -> CompressedLayer {
    let mut r = oracle::rng(seed);
    let a = prox_l21(&oracle::randn(&mut r, n, m, 1.0), 1.5).unwrap();
    let f = LowRankFactors {
        u: oracle::randn(&mut r, n, rank, 1.0),
        v: oracle::randn(&mut r, rank, m, 1.0),
    };
    let meta = LayerMetadata {
        name: format!("layer{seed}"),
        residual: Some(1e-4),
        seed: Some(seed),
        ..Default::default()
    };
    CompressedLayer::new(pack_sparse(&a, 0.0), LowRankPart::Factors(f), meta).unwrap()
}

#[test]
fn prox_output_packs_losslessly() {
    let mut r = oracle::rng(21);
    for _ in 0..20 {
        let a = prox_l21(&oracle::randn(&mut r, 6, 12, 1.0), 2.0).unwrap();
        let packed = pack_sparse(&a, 0.0);
        assert_eq!(packed.densify(), a);
        let zero_cols = (0..12).filter(|&j| a.column_norm(j) == 0.0).count();
        assert_eq!(packed.nnz_cols(), 12 - zero_cols);
    }
}

#[test]
fn svt_factor_rank_counts_surviving_singular_values() {
    let mut r = oracle::rng(22);
    for _ in 0..20 {
        let d = oracle::randn(&mut r, 7, 5, 1.0);
        let (b, _) = svt(&d, 1.0).unwrap();
        let f = factorize_lowrank(&b, 1e-10).unwrap();
        let expected = oracle::singular_values(&d).iter().filter(|s| **s > 1.0).count();
        assert_eq!(f.rank(), expected);
        if expected > 0 {
            assert!(f.product().rel_error(&b) <= 1e-8);
        }
    }
}

#[test]
fn file_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.slrl");
    let original = layer(1, 8, 10, 2);
    serialize(&original, &path).unwrap();
    assert_eq!(deserialize(&path).unwrap(), original);

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(deserialize(&path), Err(Error::Corrupt(_))));
}

#[test]
fn older_version_is_named_in_the_error() {
    // a container as a version-0 writer would have stamped it
    let mut bytes = to_bytes(&layer(2, 4, 6, 1)).unwrap();
    bytes[4..6].copy_from_slice(&(FORMAT_VERSION - 1).to_le_bytes());
    let body = bytes.len() - 4;
    let crc = crc32(&bytes[..body]);
    bytes[body..].copy_from_slice(&crc.to_le_bytes());
    match from_bytes(&bytes) {
        Err(Error::VersionMismatch { found, expected }) => {
            assert_eq!((found, expected), (FORMAT_VERSION - 1, FORMAT_VERSION))
        }
        other => panic!("expected a version mismatch, got {other:?}"),
    }
}

// bitwise CRC-32 (IEEE), independent of the crate's checksum code
fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 {
                (crc >> 1) ^ 0xEDB8_8320
            } else {
                crc >> 1
            };
        }
    }
    !crc
}

#[test]
fn csr_export_reads_back_as_the_sparse_part() {
    let dir = tempfile::tempdir().unwrap();
    let l = layer(3, 5, 9, 1);
    let [indptr, indices, data] = export_csr(&l, dir.path(), "fc").unwrap();
    let (indptr, indices) = (read_npy_i64(indptr).unwrap(), read_npy_i64(indices).unwrap());
    let data = read_npy(data).unwrap().data;
    let mut dense = Matrix::zeros(5, 9);
    for r in 0..5 {
        for k in indptr[r] as usize..indptr[r + 1] as usize {
            dense[(r, indices[k] as usize)] = data[k];
        }
    }
    assert_eq!(dense, l.sparse.densify());
}

#[test]
fn dense_fallback_counts_full_size() {
    let mut r = oracle::rng(4);
    let f = LowRankFactors {
        u: oracle::randn(&mut r, 4, 4, 1.0),
        v: oracle::randn(&mut r, 4, 4, 1.0),
    };
    let l = CompressedLayer::new(
        pack_sparse(&Matrix::zeros(4, 4), 0.0),
        LowRankPart::Factors(f),
        Default::default(),
    )
    .unwrap();
    assert!(matches!(l.lowrank, LowRankPart::Dense(_)));
    assert_eq!(compression_rate(&l).cr_b, 100.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn param_counts_follow_the_layout(seed in any::<u64>(), n in 1usize..12, m in 1usize..12, rank in 0usize..4) {
        let l = layer(seed, n, m, rank);
        let nnz = l.sparse.nnz_cols();
        prop_assert_eq!(l.param_counts.original, n * m);
        prop_assert_eq!(l.param_counts.sparse, n * nnz + nnz);
        let expected_lowrank = match &l.lowrank {
            LowRankPart::None => 0,
            LowRankPart::Factors(f) => f.rank() * (n + m),
            LowRankPart::Dense(_) => n * m,
        };
        prop_assert_eq!(l.param_counts.lowrank, expected_lowrank);
        let cr = compression_rate(&l);
        prop_assert!((cr.cr_total - (cr.cr_a + cr.cr_b)).abs() <= 1e-12);
    }

    #[test]
    fn refactorizing_keeps_the_rank(seed in any::<u64>(), rank in 1usize..4) {
        let mut r = oracle::rng(seed);
        let b = oracle::randn(&mut r, 7, rank, 1.0).matmul(&oracle::randn(&mut r, rank, 6, 1.0));
        let once = factorize_lowrank(&b, 1e-10).unwrap();
        let twice = factorize_lowrank(&once.product(), 1e-10).unwrap();
        prop_assert_eq!(once.rank(), rank);
        prop_assert_eq!(twice.rank(), once.rank());
    }

    #[test]
    fn pack_then_densify_is_identity_with_exact_zero_columns(seed in any::<u64>(), mask in prop::collection::vec(any::<bool>(), 8)) {
        let mut a = oracle::randn(&mut oracle::rng(seed), 3, 8, 1.0);
        for (j, keep) in mask.iter().enumerate() {
            if !keep {
                a.set_column(j, &[0.0; 3]);
            }
        }
        prop_assert_eq!(pack_sparse(&a, 0.0).densify(), a);
    }
}
