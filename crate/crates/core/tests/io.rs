use std::fs;
use std::path::Path;

use fgwarp::data_io::{
    davis_palette, generate_synthetic, read_davis_layout, read_label_png, write_label_png,
    write_sequences, ReadMode, SyntheticSpec,
};
use fgwarp::diffarray::checkpoint;
use fgwarp::eval::read_label_sequences;
use fgwarp::model::{load_checkpoint, save_checkpoint};
use fgwarp::warp::flo::{decode, encode, read_flo, write_flo};
use fgwarp::warp::FlowField;
use fgwarp::{Array, RunConfig, VosModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn write_rgb(path: &Path, h: u32, w: u32, seed: u8) {
    image::RgbImage::from_fn(w, h, |x, y| image::Rgb([x as u8 * 10, y as u8 * 10, seed]))
        .save(path)
        .unwrap();
}

fn toy_root(root: &Path, name: &str, labels: &[Vec<u8>], frames: usize, h: usize, w: usize) {
    let img = root.join("JPEGImages").join(name);
    let ann = root.join("Annotations").join(name);
    fs::create_dir_all(&img).unwrap();
    fs::create_dir_all(&ann).unwrap();
    for t in 0..frames {
        write_rgb(
            &img.join(format!("{t:05}.jpg")),
            h as u32,
            w as u32,
            t as u8,
        );
    }
    for (t, l) in labels.iter().enumerate() {
        write_label_png(&ann.join(format!("{t:05}.png")), l, h, w).unwrap();
    }
}

#[test]
fn reads_two_frame_toy_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let (h, w) = (4, 5);
    let l0: Vec<u8> = (0..h * w).map(|i| u8::from(i < 6)).collect();
    let l1: Vec<u8> = (0..h * w).map(|i| u8::from((3..9).contains(&i))).collect();
    toy_root(tmp.path(), "toy", &[l0.clone(), l1.clone()], 2, h, w);
    let seqs = read_davis_layout(tmp.path(), ReadMode::Full).unwrap();
    assert_eq!(seqs.len(), 1);
    let s = &seqs[0];
    assert_eq!(
        (s.name.as_str(), s.len(), s.dims().unwrap()),
        ("toy", 2, (h, w))
    );
    assert_eq!(s.object_ids, vec![1]);
    assert_eq!(s.label_map(0).unwrap(), l0);
    assert_eq!(s.label_map(1).unwrap(), l1);
    assert!(s.fully_annotated());
    let first = read_davis_layout(tmp.path(), ReadMode::FirstFrameOnly).unwrap();
    assert_eq!(first[0].masks[0].len(), 1);
    assert_eq!(first[0].frames.len(), 2);
}

#[test]
fn sparse_object_ids_keep_their_palette_index() {
    let tmp = tempfile::tempdir().unwrap();
    let (h, w) = (3, 3);
    let l0 = vec![0, 1, 1, 0, 3, 3, 0, 0, 0];
    toy_root(tmp.path(), "sparse", &[l0.clone(), l0.clone()], 2, h, w);
    let s = &read_davis_layout(tmp.path(), ReadMode::Full).unwrap()[0];
    assert_eq!(s.object_ids, vec![1, 3]);
    assert_eq!(s.masks[1][0].data(), &[0., 0., 0., 0., 1., 1., 0., 0., 0.]);
    assert_eq!(s.label_map(1).unwrap(), l0);
}

#[test]
fn corrupt_and_missing_inputs_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (h, w) = (3, 3);
    toy_root(tmp.path(), "bad", &[vec![1; 9]], 2, h, w);
    fs::write(tmp.path().join("JPEGImages/bad/00001.jpg"), b"not an image").unwrap();
    let err = read_davis_layout(tmp.path(), ReadMode::FirstFrameOnly)
        .unwrap_err()
        .to_string();
    assert!(err.contains("00001.jpg"), "{err}");

    let tmp2 = tempfile::tempdir().unwrap();
    toy_root(tmp2.path(), "short", &[vec![1; 9]], 2, h, w);
    assert!(read_davis_layout(tmp2.path(), ReadMode::Full).is_err());
    assert!(read_davis_layout(&tmp2.path().join("nothing"), ReadMode::Full).is_err());
}

#[test]
fn flo_roundtrip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w) = (64, 64);
    let px = Array::new(
        [2, h, w],
        (0..2 * h * w)
            .map(|_| rng.random_range(-20.0f32..20.0))
            .collect(),
    )
    .unwrap();
    let flow = FlowField::from_pixels(&px).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("f.flo");
    write_flo(&path, &flow).unwrap();
    let back = read_flo(&path).unwrap();
    assert_eq!(back, flow);
    assert_eq!(back.to_pixels(), px);
    let bytes = encode(&flow);
    assert_eq!(&bytes[..4], &202021.25f32.to_le_bytes());
    assert_eq!(bytes.len(), 12 + 8 * h * w);
    assert!(decode(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn palette_masks_roundtrip_losslessly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tmp = tempfile::tempdir().unwrap();
    let (h, w) = (17, 23);
    let labels: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..=255)).collect();
    let path = tmp.path().join("m.png");
    write_label_png(&path, &labels, h, w).unwrap();
    assert_eq!(read_label_png(&path).unwrap(), (labels, h, w));
    let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(&path).unwrap()));
    let reader = decoder.read_info().unwrap();
    let info = reader.info();
    assert_eq!(info.color_type, png::ColorType::Indexed);
    assert_eq!(info.palette.as_deref().unwrap(), davis_palette().as_slice());
}

#[test]
fn synthetic_dataset_survives_disk_roundtrip() {
    let spec = SyntheticSpec {
        num_sequences: 3,
        frames_per_sequence: 4,
        ..Default::default()
    };
    let seqs = generate_synthetic(&spec).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_sequences(tmp.path(), &seqs).unwrap();
    let back = read_davis_layout(tmp.path(), ReadMode::Full).unwrap();
    assert_eq!(back.len(), seqs.len());
    for (a, b) in seqs.iter().zip(&back) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.object_ids, b.object_ids);
        assert_eq!(a.masks, b.masks);
    }
    let labels = read_label_sequences(tmp.path()).unwrap();
    assert_eq!(labels.len(), 3);
    assert_eq!(labels[0].frames[2], seqs[0].label_map(2).unwrap());
    let motion = fs::read_to_string(tmp.path().join("motion.txt")).unwrap();
    let rows = motion.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(
        rows,
        seqs.iter().map(|s| s.num_objects() * 3).sum::<usize>()
    );
}

#[test]
fn checkpoint_reload_reproduces_inference_bit_exact() {
    let run = RunConfig::default();
    let mut model = VosModel::init(run.flownet, run.segnet, 7).unwrap();
    for (_, p) in model.flownet.params.iter_mut() {
        for (i, v) in p.data_mut().iter_mut().enumerate() {
            *v += (i % 7) as f32 * 1e-3;
        }
    }
    let seq = generate_synthetic(&SyntheticSpec {
        num_sequences: 1,
        frames_per_sequence: 4,
        ..Default::default()
    })
    .unwrap()
    .remove(0);
    let tmp = tempfile::tempdir().unwrap();
    save_checkpoint(tmp.path(), &run, &model).unwrap();
    let (run2, loaded) = load_checkpoint(tmp.path()).unwrap();
    assert_eq!(run2, run);
    assert_eq!(loaded, model);
    let (a, b) = (
        model.propagate(&seq).unwrap(),
        loaded.propagate(&seq).unwrap(),
    );
    for k in 0..seq.num_objects() {
        assert_eq!(a.masks[k], b.masks[k]);
        assert_eq!(a.flows[k], b.flows[k]);
    }
    let bytes = fs::read(tmp.path().join("flownet.wseg")).unwrap();
    assert_eq!(&bytes[..4], b"WSEG");
    assert_eq!(checkpoint::decode(&bytes).unwrap(), model.flownet.params);
    fs::write(tmp.path().join("segnet.wseg"), &bytes).unwrap();
    assert!(load_checkpoint(tmp.path()).is_err());
}
