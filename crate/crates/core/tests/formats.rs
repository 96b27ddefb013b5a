use std::panic::{catch_unwind, AssertUnwindSafe};

use hyperada::data_io::{
    decode_cloud, decode_tensor, encode_labels, encode_points, encode_tensor, read_cloud, read_tensor,
    write_cloud, write_tensor, ClassMap, CloudFilePair, DType, Tensor, TensorData, MAGIC,
};
use hyperada::geometry::Curvature;
use hyperada::mixing::LabeledCloud;
use hyperada::trainer::{decode_checkpoint, encode_checkpoint, Model, TrainingConfig};
use hyperada::Modality;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud_strategy() -> impl Strategy<Value = LabeledCloud> {
    prop::collection::vec(
        (prop::array::uniform4(any::<f32>().prop_filter("finite", |v| v.is_finite())), 0u32..65536, 0u32..65536),
        0..200,
    )
    .prop_map(|rows| {
        let points = rows.iter().map(|(p, _, _)| p.map(f64::from)).collect();
        let labels = rows.iter().map(|r| r.1).collect();
        let inst = rows.iter().map(|r| r.2).collect();
        LabeledCloud::new(points, labels, Some(inst)).unwrap()
    })
}

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0usize..6, 0..4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        let data = prop_oneof![
            prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n).prop_map(TensorData::F32),
            prop::collection::vec(any::<u64>().prop_map(f64::from_bits), n).prop_map(TensorData::F64),
            prop::collection::vec(any::<u8>(), n).prop_map(TensorData::U8),
            prop::collection::vec(any::<u32>(), n).prop_map(TensorData::U32),
        ];
        (Just(shape), data).prop_map(|(s, d)| Tensor::new(s, d).unwrap())
    })
}

proptest! {
    #[test]
    fn cloud_bytes_round_trip(cloud in cloud_strategy()) {
        let p = encode_points(&cloud).unwrap();
        let l = encode_labels(&cloud).unwrap();
        let back = decode_cloud(&p, &l).unwrap();
        prop_assert_eq!(encode_points(&back).unwrap(), p);
        prop_assert_eq!(encode_labels(&back).unwrap(), l);
        for (a, b) in cloud.points.iter().zip(&back.points) {
            for k in 0..4 {
                prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
        prop_assert_eq!(&back.labels, &cloud.labels);
        prop_assert_eq!(&back.instances, &cloud.instances);
    }

    #[test]
    fn tensor_bytes_round_trip(t in tensor_strategy()) {
        let bytes = encode_tensor(&t);
        let back = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(&back.shape, &t.shape);
        prop_assert_eq!(back.data.dtype(), t.data.dtype());
        prop_assert_eq!(encode_tensor(&back), bytes);
    }
}

#[test]
fn files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = LabeledCloud::new(
        vec![[1.0, 2.0, 3.0, 0.5], [-0.25, f64::from(1e-3f32), 7.5, 0.0]],
        vec![9, 65535],
        Some(vec![3, 0]),
    )
    .unwrap();
    let pair = CloudFilePair::new(dir.path().join("a.bin"), dir.path().join("a.label"));
    write_cloud(&cloud, &pair).unwrap();
    let labels = std::fs::read(dir.path().join("a.label")).unwrap();
    assert_eq!(&labels[..4], &(3u32 * 65536 + 9).to_le_bytes());
    assert_eq!(read_cloud(&pair).unwrap(), cloud);

    let t = Tensor::new(vec![2, 3], TensorData::F64(vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.0, 2.5])).unwrap();
    let path = dir.path().join("t.hyt");
    write_tensor(&t, &path).unwrap();
    let back = read_tensor(&path).unwrap();
    assert_eq!(encode_tensor(&back), encode_tensor(&t));
    assert_eq!(DType::F64.size(), 8);
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent.hyt");
    let msg = read_tensor(&path).unwrap_err().to_string();
    assert!(msg.contains("absent.hyt"), "{msg}");
}

#[test]
fn checkpoint_round_trip() {
    let cfg = TrainingConfig::for_modality(Modality::Rgb);
    let model = Model::init(27, 6, 4, 5, Curvature::default(), &mut ChaCha8Rng::seed_from_u64(1));
    let bytes = encode_checkpoint(&model, &cfg);
    let back = decode_checkpoint(&bytes, Some(&cfg)).unwrap();
    assert_eq!(back, model);
    assert_eq!(encode_checkpoint(&back, &cfg), bytes);
}

/// Outcome counts of a fuzz campaign against one reader.
#[derive(Debug, Default)]
struct Campaign {
    rejected: usize,
    accepted: usize,
    crashes: usize,
    silent: usize,
}

fn random_bytes(rng: &mut impl Rng, prefix: &[u8]) -> Vec<u8> {
    let len = rng.random_range(0..=256);
    let mut v = prefix.to_vec();
    v.extend((0..len).map(|_| rng.random::<u8>()));
    v
}

/// Runs `reader` on each input and classifies the outcome. An accepted
/// input must re-encode to the same bytes.
fn campaign<F>(inputs: usize, mut make: impl FnMut(usize) -> Vec<u8>, mut reader: F) -> Campaign
where
    F: FnMut(&[u8]) -> Result<bool, String>,
{
    let mut c = Campaign::default();
    for i in 0..inputs {
        let bytes = make(i);
        match catch_unwind(AssertUnwindSafe(|| reader(&bytes))) {
            Err(_) => c.crashes += 1,
            Ok(Ok(true)) => c.accepted += 1,
            Ok(Ok(false)) => c.crashes += 1,
            Ok(Err(msg)) if msg.trim().is_empty() => c.silent += 1,
            Ok(Err(_)) => c.rejected += 1,
        }
    }
    c
}

const FUZZ_INPUTS: usize = 100_000;

#[test]
fn tensor_reader_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let c = campaign(
        FUZZ_INPUTS,
        |i| match i % 3 {
            0 => random_bytes(&mut rng, &[]),
            1 => random_bytes(&mut rng, &MAGIC),
            _ => {
                let tag = rng.random_range(0..4u8);
                let rank = rng.random_range(0..4u8);
                random_bytes(&mut rng, &[MAGIC[0], MAGIC[1], MAGIC[2], MAGIC[3], tag, rank])
            }
        },
        |b| decode_tensor(b).map(|t| encode_tensor(&t) == b).map_err(|e| e.to_string()),
    );
    assert_eq!((c.crashes, c.silent), (0, 0), "{c:?}");
    assert_eq!(c.rejected + c.accepted, FUZZ_INPUTS);
}

#[test]
fn cloud_reader_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut cuts = ChaCha8Rng::seed_from_u64(23);
    let c = campaign(
        FUZZ_INPUTS,
        |_| random_bytes(&mut rng, &[]),
        |b| {
            let cut = cuts.random_range(0..=b.len());
            let (p, l) = b.split_at(cut);
            decode_cloud(p, l)
                .map(|cl| encode_points(&cl).unwrap() == p && encode_labels(&cl).unwrap() == l)
                .map_err(|e| e.to_string())
        },
    );
    assert_eq!((c.crashes, c.silent), (0, 0), "{c:?}");
    assert_eq!(c.rejected + c.accepted, FUZZ_INPUTS);
}

#[test]
fn checkpoint_reader_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let cfg = TrainingConfig::for_modality(Modality::Lidar);
    let model = Model::init(5, 4, 3, 4, Curvature::default(), &mut ChaCha8Rng::seed_from_u64(2));
    let valid = encode_checkpoint(&model, &cfg);
    let c = campaign(
        FUZZ_INPUTS,
        |i| match i % 3 {
            0 => random_bytes(&mut rng, &[]),
            1 => random_bytes(&mut rng, &valid[..40]),
            _ => {
                let mut v = valid.clone();
                for _ in 0..rng.random_range(1..4) {
                    let at = rng.random_range(0..v.len());
                    v[at] = rng.random();
                }
                v.truncate(rng.random_range(0..=v.len()));
                v
            }
        },
        |b| decode_checkpoint(b, None).map(|m| encode_checkpoint(&m, &cfg)[40..] == b[40..]).map_err(|e| e.to_string()),
    );
    assert_eq!((c.crashes, c.silent), (0, 0), "{c:?}");
}

#[test]
fn class_map_reader_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let c = campaign(
        FUZZ_INPUTS / 10,
        |_| random_bytes(&mut rng, b"{\"name\":"),
        |b| {
            ClassMap::from_json(&String::from_utf8_lossy(b))
                .map(|m| m.validate().is_ok())
                .map_err(|e| e.to_string())
        },
    );
    assert_eq!((c.crashes, c.silent, c.accepted), (0, 0, 0), "{c:?}");
}
