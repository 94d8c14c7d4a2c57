//! Round trips and damage handling for every file format.

use std::path::Path;

use proptest::prelude::*;

use spanet::checkpoint::{self, Record};
use spanet::error::FormatError;
use spanet::manifest::{self, Split};
use spanet::report;
use spanet::{pnm, CliError, RunConfig};
use spanet_core::data::Image;
use spanet_core::metrics::MetricsReport;
use spanet_core::network::{build_network, NetworkConfig};
use spanet_core::train::EpochRecord;
use spanet_core::{ParamStore, Shape, Tensor};

fn store_from(values: &[Vec<f32>]) -> ParamStore<f32> {
    let mut store = ParamStore::new();
    for (i, v) in values.iter().enumerate() {
        let t = Tensor::from_vec(Shape::new(1, v.len(), 1, 1), v.clone()).unwrap();
        store.add(format!("layer{i}.w"), vec![v.len()], t);
    }
    store
}

fn bits(store: &ParamStore<f32>) -> Vec<u32> {
    store.iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn network_checkpoint_round_trips_bitwise() {
    let cfg = NetworkConfig::toy(4);
    let net = build_network::<f32>(&cfg, 5).unwrap();
    let bytes = checkpoint::encode(&net.params);
    let mut other = build_network::<f32>(&cfg, 6).unwrap();
    assert_ne!(bits(&net.params), bits(&other.params));
    checkpoint::restore(&mut other.params, checkpoint::decode(&bytes).unwrap()).unwrap();
    assert_eq!(bits(&net.params), bits(&other.params));
    assert_eq!(checkpoint::encode(&other.params), bytes);
}

#[test]
fn every_truncation_is_reported() {
    let store = store_from(&[vec![1.0, -2.0, 3.5], vec![0.25; 5]]);
    let bytes = checkpoint::encode(&store);
    for len in 0..bytes.len() {
        let err = checkpoint::decode(&bytes[..len]).unwrap_err();
        assert!(
            matches!(err, FormatError::TruncatedHeader | FormatError::TruncatedRecord { .. }),
            "{len}: {err:?}"
        );
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert_eq!(checkpoint::decode(&longer).unwrap_err(), FormatError::TrailingBytes(1));
}

#[test]
fn checkpoint_header_damage() {
    let store = store_from(&[vec![1.0, 2.0]]);
    let good = checkpoint::encode(&store);
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(checkpoint::decode(&magic), Err(FormatError::BadMagic(_))));
    let mut version = good.clone();
    version[4] = 9;
    assert_eq!(checkpoint::decode(&version).unwrap_err(), FormatError::UnsupportedVersion(9));
    // a huge element count must not allocate or read past the end
    let mut huge = good.clone();
    let dims_at = 4 + 1 + 4 + 4 + "layer0.w".len() + 1;
    huge[dims_at..dims_at + 4].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(matches!(checkpoint::decode(&huge), Err(FormatError::TruncatedRecord { index: 0 })));
}

#[test]
fn restore_checks_names_and_shapes() {
    let mut store = store_from(&[vec![1.0, 2.0], vec![3.0]]);
    let rec = |name: &str, dims: Vec<usize>, values: Vec<f32>| Record { name: name.into(), dims, values };
    let cases = [
        (vec![rec("layer0.w", vec![2], vec![0.0; 2])], FormatError::MissingRecord { name: "layer1.w".into() }),
        (
            vec![rec("layer0.w", vec![2], vec![0.0; 2]), rec("layer0.w", vec![2], vec![0.0; 2])],
            FormatError::DuplicateRecord { name: "layer0.w".into() },
        ),
        (vec![rec("extra", vec![1], vec![0.0])], FormatError::UnexpectedRecord { name: "extra".into() }),
        (
            vec![rec("layer0.w", vec![1, 2], vec![0.0; 2]), rec("layer1.w", vec![1], vec![0.0])],
            FormatError::ShapeMismatch { name: "layer0.w".into(), expected: vec![2], found: vec![1, 2] },
        ),
    ];
    for (records, want) in cases {
        assert_eq!(checkpoint::restore(&mut store, records).unwrap_err(), want);
    }
}

#[test]
fn checkpoint_file_errors_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.spa1");
    std::fs::write(&path, b"SPA1").unwrap();
    let mut store = store_from(&[vec![1.0]]);
    let err = checkpoint::load_into(&path, &mut store).unwrap_err();
    assert!(matches!(err, CliError::Format { detail: FormatError::TruncatedHeader, .. }));
    assert_eq!(err.exit_code(), CliError::EXIT_DATA);
    let missing = checkpoint::load_into(&dir.path().join("none.spa1"), &mut store).unwrap_err();
    assert_eq!(missing.exit_code(), CliError::EXIT_DATA);
}

fn classes() -> Vec<String> {
    ["Remain", "Multi-Dots", "Scratch"].iter().map(|s| s.to_string()).collect()
}

fn parse_manifest(text: &str) -> spanet::Result<Vec<manifest::SampleRecord>> {
    manifest::parse(text, "m.csv", Path::new("/data"), &classes(), false)
}

#[test]
fn manifest_accepts_names_and_ids() {
    let rows = parse_manifest("path,label,split\na.pgm,multi_dots,train\nsub/b.pgm,2,test\n\"c,d.pgm\",Remain,val\n").unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!((rows[0].label, rows[0].split, rows[0].line), (1, Split::Train, 2));
    assert_eq!(rows[1].path, Path::new("/data/sub/b.pgm"));
    assert_eq!(rows[2].path, Path::new("/data/c,d.pgm"));
    assert!(parse_manifest("path,label,split\n").unwrap().is_empty());
}

#[test]
fn malformed_manifests_name_the_line() {
    let cases = [
        ("file,label,split\na.pgm,0,train\n", "m.csv:1:"),
        ("path,label\na.pgm,0\n", "m.csv:1:"),
        ("path,label,split\na.pgm,0,train\nb.pgm,7,train\n", "m.csv:3:"),
        ("path,label,split\na.pgm,Fallon,train\n", "m.csv:2:"),
        ("path,label,split\na.pgm,0,holdout\n", "m.csv:2:"),
        ("path,label,split\na.pgm,0,train\nb.pgm,1\n", "m.csv:3:"),
        ("path,label,split\n,0,train\n", "m.csv:2:"),
        ("path,label,split\na.pgm,0,train\na.pgm,1,test\n", "m.csv:3:"),
    ];
    for (text, want) in cases {
        match parse_manifest(text) {
            Err(e @ CliError::Data(_)) => {
                assert!(e.to_string().contains(want), "{text:?}: {e}");
                assert_eq!(e.exit_code(), CliError::EXIT_DATA);
            }
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn manifest_checks_files_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(&path, "path,label,split\nmissing.pgm,0,train\n").unwrap();
    let err = manifest::load(&path, &classes()).unwrap_err();
    assert!(err.to_string().contains("missing.pgm"), "{err}");
    assert_eq!(err.exit_code(), CliError::EXIT_DATA);
}

#[test]
fn pnm_headers_with_comments_and_small_maxval() {
    let mut bytes = b"P5\n# comment line\n3 1\n# another\n15\n".to_vec();
    bytes.extend_from_slice(&[0, 15, 7]);
    let img = pnm::decode(&bytes).unwrap();
    assert_eq!((img.width, img.height, img.channels), (3, 1, 1));
    assert_eq!(img.pixels, [0, 255, 119]);
    for bad in [&b"P3\n1 1\n255\n\0"[..], b"P5\n1 1\n255\n", b"P5\n0 1\n255\n", b"P5\n1 1\n256\n\0", b"P6 2 2 255\n\0\0\0", b"P5\n99999999999 99999999999\n255\n\0", b""] {
        assert!(pnm::decode(bad).is_err(), "{bad:?}");
    }
}

#[test]
fn run_and_metrics_csv_parse_back() {
    let records = [
        EpochRecord { epoch: 1, lr: 0.1, train_loss: 1.5, train_acc: 0.25, val_loss: Some(1.25), val_acc: Some(0.5) },
        EpochRecord { epoch: 2, lr: 0.05, train_loss: 0.75, train_acc: 0.5, val_loss: None, val_acc: None },
    ];
    let text = report::run_csv(&records);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(&rows[0][4], "1.25");
    assert_eq!(&rows[1][5], "");
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), 0.05);

    let report = MetricsReport::from_predictions(&[0, 0, 1, 2], &[0, 1, 1, 2], 3).unwrap();
    let names = vec!["a".to_string(), "b,c".to_string(), "d".to_string()];
    let text = report::metrics_csv(&report, &names);
    let rows: Vec<csv::StringRecord> = csv::Reader::from_reader(text.as_bytes()).records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[1][0], "b,c");
    assert_eq!(&rows[3][0], "macro");
    assert_eq!(rows[3][5].parse::<f64>().unwrap(), 0.75);
    assert_eq!(rows[3][4].parse::<u64>().unwrap(), 4);
}

#[test]
fn config_text_round_trips() {
    let text = "[network]\npreset = paper\nratio = 0.25\n\n[training]\nloss = cross_entropy\nschedule = plateau\n\
                epochs = 3\n\n[data]\nclasses = Remain, Ball\nmean = 0.4, 0.5, 0.6\n\n[output]\nplot = true\n";
    let cfg = RunConfig::parse(text).unwrap();
    assert_eq!(cfg.training.lr, spanet::config::DEFAULT_LR_CROSS_ENTROPY);
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    for bad in ["[training]\nepochs = 3\nepochs = 4\n", "epochs = 3\n", "[train]\n", "[training]\nepochs\n", "[data]\nclasses = a, A\n"] {
        let err = RunConfig::parse(bad).unwrap_err();
        assert_eq!(err.exit_code(), CliError::EXIT_CONFIG, "{bad:?}: {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_store_round_trips(values in prop::collection::vec(prop::collection::vec(any::<f32>(), 1..20), 1..6)) {
        let store = store_from(&values);
        let bytes = checkpoint::encode(&store);
        let mut copy = store_from(&values.iter().map(|v| vec![0.0; v.len()]).collect::<Vec<_>>());
        checkpoint::restore(&mut copy, checkpoint::decode(&bytes).unwrap()).unwrap();
        prop_assert_eq!(bits(&copy), bits(&store));
    }

    #[test]
    fn garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = checkpoint::decode(&bytes);
        let _ = pnm::decode(&bytes);
        let mut with_magic = b"SPA1\x01".to_vec();
        with_magic.extend_from_slice(&bytes);
        let _ = checkpoint::decode(&with_magic);
        let mut p5 = b"P5\n".to_vec();
        p5.extend_from_slice(&bytes);
        let _ = pnm::decode(&p5);
        let _ = parse_manifest(&String::from_utf8_lossy(&bytes));
    }

    #[test]
    fn any_image_round_trips(w in 1usize..9, h in 1usize..9, color in any::<bool>(), seed in any::<u64>()) {
        let c = if color { 3 } else { 1 };
        let pixels: Vec<u8> = (0..w * h * c).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
        let img = Image::new(w, h, c, pixels).unwrap();
        let bytes = pnm::encode(&img);
        let magic: &[u8] = if color { b"P6" } else { b"P5" };
        prop_assert!(bytes.starts_with(magic));
        prop_assert_eq!(pnm::decode(&bytes).unwrap(), img);
    }
}
