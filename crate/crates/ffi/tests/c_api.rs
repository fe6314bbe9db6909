use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use reprsim_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(rs_last_error()) }.to_string_lossy().into_owned()
}

fn frames(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut s = seed;
    (0..n * d)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

unsafe fn self_moments(n: usize, d: usize) -> *mut RsMoments {
    let x = frames(n, d, 7);
    let mut m = ptr::null_mut();
    assert_eq!(rs_moments_from_frames(x.as_ptr(), x.as_ptr(), n, d, d, &mut m), RsStatus::Ok);
    m
}

#[test]
fn self_similarity_through_the_c_interface() {
    unsafe {
        let m = self_moments(500, 6);
        assert_eq!(rs_moments_len(m), 1);
        let (mut lx, mut ly, mut n) = (9u16, 9u16, 0u64);
        assert_eq!(rs_moments_pair(m, 0, &mut lx, &mut ly, &mut n), RsStatus::Ok);
        assert_eq!((lx, ly, n), (0, 0, 500));

        let mut params = std::mem::zeroed::<RsParams>();
        assert_eq!(rs_params_default(&mut params), RsStatus::Ok);
        for code in [RS_MEASURE_NEU_NEU, RS_MEASURE_NEU_LAY, RS_MEASURE_SVCCA, RS_MEASURE_PWCCA] {
            let (mut v, mut f) = (0.0, 0u32);
            assert_eq!(rs_score(m, 0, code, &params, &mut v, &mut f), RsStatus::Ok, "{}", last_error());
            assert!((v - 1.0).abs() < 1e-6, "measure {code}: {v}");
        }
        let (mut v, mut f) = (0.0, 0u32);
        assert_eq!(rs_score(m, 0, RS_MEASURE_NEU_NEU, ptr::null(), &mut v, &mut f), RsStatus::Ok);
        rs_moments_free(m);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let m = self_moments(50, 3);
        let (mut v, mut f) = (0.0, 0u32);
        assert_eq!(rs_score(m, 3, RS_MEASURE_NEU_NEU, ptr::null(), &mut v, &mut f), RsStatus::Usage);
        assert!(last_error().contains("out of range"));
        assert_eq!(rs_score(m, 0, 42, ptr::null(), &mut v, &mut f), RsStatus::Usage);
        assert_eq!(rs_score(m, 0, RS_MEASURE_NEU_NEU, ptr::null(), ptr::null_mut(), &mut f), RsStatus::NullPointer);
        assert_eq!(rs_score(ptr::null(), 0, RS_MEASURE_NEU_NEU, ptr::null(), &mut v, &mut f), RsStatus::NullPointer);
        assert!(last_error().contains("moments"));

        let mut bad = std::mem::zeroed::<RsParams>();
        rs_params_default(&mut bad);
        bad.svcca_threshold = 2.0;
        assert_eq!(rs_score(m, 0, RS_MEASURE_SVCCA, &bad, &mut v, &mut f), RsStatus::Usage);
        rs_moments_free(m);

        let mut out = ptr::null_mut();
        let missing = CString::new("/nonexistent/x.rsd").unwrap();
        assert_eq!(rs_moments_from_dumps(missing.as_ptr(), missing.as_ptr(), c"all".as_ptr(), 1 << 30, &mut out), RsStatus::Data);
        assert!(out.is_null());
        assert!(last_error().contains("/nonexistent/x.rsd"));

        let x = [f64::NAN; 4];
        assert_eq!(rs_moments_from_frames(x.as_ptr(), x.as_ptr(), 2, 2, 2, &mut out), RsStatus::Ok);
        rs_moments_free(out);

        let mut prefix = 0usize;
        assert_eq!(rs_advise(ptr::null(), 0, 0.5, &mut prefix), RsStatus::Usage);
        assert_eq!(rs_advise(x.as_ptr(), 4, 0.5, &mut prefix), RsStatus::Numerical);

        rs_moments_free(ptr::null_mut());
        rs_grid_free(ptr::null_mut());
        rs_string_free(ptr::null_mut());
        assert_eq!(rs_moments_len(ptr::null()), 0);
        assert!(rs_grid_to_csv(ptr::null()).is_null());
    }
}

#[test]
fn advise_returns_freeze_prefix() {
    let mut sim = vec![0.9; 16];
    sim.extend([0.3; 8]);
    let mut prefix = 0usize;
    unsafe {
        assert_eq!(rs_advise(sim.as_ptr(), sim.len(), 0.5, &mut prefix), RsStatus::Ok);
    }
    assert_eq!(prefix, 16);
}

#[test]
fn grid_csv_and_svg_round_trip() {
    unsafe {
        let m = self_moments(300, 4);
        let mut grid = ptr::null_mut();
        assert_eq!(rs_grid_build(m, RS_MEASURE_PWCCA, ptr::null(), &mut grid), RsStatus::Ok, "{}", last_error());
        let (mut r, mut c) = (0, 0);
        assert_eq!(rs_grid_dims(grid, &mut r, &mut c), RsStatus::Ok);
        assert_eq!((r, c), (1, 1));
        let (mut v, mut f) = (0.0, 0u32);
        assert_eq!(rs_grid_cell(grid, 0, 0, &mut v, &mut f), RsStatus::Ok);
        assert!((v - 1.0).abs() < 1e-6);
        assert_eq!(rs_grid_cell(grid, 1, 0, &mut v, &mut f), RsStatus::Usage);

        let csv = rs_grid_to_csv(grid);
        assert!(!csv.is_null());
        let mut back = ptr::null_mut();
        assert_eq!(rs_grid_from_csv(csv, &mut back), RsStatus::Ok);
        let again = rs_grid_to_csv(back);
        assert_eq!(CStr::from_ptr(csv), CStr::from_ptr(again));

        let svg = rs_grid_to_svg(grid);
        assert!(CStr::from_ptr(svg).to_str().unwrap().contains("<svg"));

        let mut bad = ptr::null_mut();
        assert_eq!(rs_grid_from_csv(c"not a grid".as_ptr(), &mut bad), RsStatus::Data);
        assert!(bad.is_null());

        for s in [csv, again, svg] {
            rs_string_free(s);
        }
        rs_grid_free(grid);
        rs_grid_free(back);
        rs_moments_free(m);
    }
}

#[test]
fn moments_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.rsm").to_str().unwrap()).unwrap();
    unsafe {
        let m = self_moments(200, 5);
        assert_eq!(rs_moments_write(m, path.as_ptr()), RsStatus::Ok, "{}", last_error());
        let mut back = ptr::null_mut();
        assert_eq!(rs_moments_read(path.as_ptr(), &mut back), RsStatus::Ok);
        assert_eq!(rs_moments_len(back), 1);
        let (mut a, mut b) = (0.0, 0.0);
        let mut f = 0u32;
        rs_score(m, 0, RS_MEASURE_NEU_LAY, ptr::null(), &mut a, &mut f);
        rs_score(back, 0, RS_MEASURE_NEU_LAY, ptr::null(), &mut b, &mut f);
        assert_eq!(a.to_bits(), b.to_bits());
        rs_moments_free(m);
        rs_moments_free(back);
    }
}

#[test]
fn dumps_stream_through_the_c_interface() {
    use reprsim::dumpio::write_dump;
    use reprsim::synth::{SynthCorpus, SynthModel};

    let dir = tempfile::tempdir().unwrap();
    let corpus = SynthCorpus::new(3, 1500);
    let mut paths = Vec::new();
    for (name, seed) in [("a", 1), ("b", 2)] {
        let model = SynthModel::new(name, seed, 3, 8);
        let path = dir.path().join(format!("{name}.rsd"));
        let file = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
        write_dump(&model.header(&corpus), &model.records(&corpus), file).unwrap();
        paths.push(CString::new(path.to_str().unwrap()).unwrap());
    }
    unsafe {
        let (mut clean, mut n) = (0, 99u64);
        assert_eq!(rs_validate_dump(paths[0].as_ptr(), &mut clean, &mut n), RsStatus::Ok);
        assert_eq!((clean, n), (1, 0));

        let mut m = ptr::null_mut();
        assert_eq!(rs_moments_from_dumps(paths[0].as_ptr(), paths[1].as_ptr(), c"all".as_ptr(), 1 << 30, &mut m), RsStatus::Ok);
        assert_eq!(rs_moments_len(m), 9);
        let mut grid = ptr::null_mut();
        assert_eq!(rs_grid_build(m, RS_MEASURE_NEU_NEU, ptr::null(), &mut grid), RsStatus::Ok, "{}", last_error());
        let (mut r, mut c) = (0, 0);
        rs_grid_dims(grid, &mut r, &mut c);
        assert_eq!((r, c), (3, 3));
        rs_grid_free(grid);
        rs_moments_free(m);

        assert_eq!(
            rs_moments_from_dumps(paths[0].as_ptr(), paths[1].as_ptr(), c"5:5".as_ptr(), 1 << 30, &mut m),
            RsStatus::Usage
        );
        assert_eq!(rs_moments_from_dumps(paths[0].as_ptr(), paths[1].as_ptr(), c"all".as_ptr(), 16, &mut m), RsStatus::Usage);
    }
}

#[test]
fn version_is_the_package_version() {
    let v = unsafe { CStr::from_ptr(rs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/reprsim.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["rs_moments_from_dumps", "rs_grid_to_svg", "rs_advise", "RS_STATUS_NUMERICAL", "typedef struct RsGrid RsGrid"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"reprsim.h\"\nint main(void) { RsParams p; RsMoments *m = 0; size_t n = rs_moments_len(m); \
         return rs_params_default(&p) == RS_STATUS_OK && n == 0 ? 0 : 1; }\n",
    )
    .unwrap();
    match Command::new("cc").arg("-std=c99").arg("-Wall").arg("-Werror").arg("-fsyntax-only").arg("-I").arg(header.parent().unwrap()).arg(&src).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler found; skipped syntax check"),
    }
}
