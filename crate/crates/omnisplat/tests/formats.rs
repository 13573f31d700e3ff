//! PLY files written byte by byte, independent of the crate's writer.

use omnisplat::checkpoint::parse_checkpoint;
use omnisplat::ply::parse_points;

const POINTS: [([f32; 3], [u8; 3]); 3] = [
    ([0.5, -1.25, 3.0], [255, 0, 7]),
    ([1e-3, 2.5e4, -0.0], [1, 2, 3]),
    ([-7.75, 0.125, 9.5], [128, 64, 32]),
];

fn ascii_points() -> Vec<u8> {
    let mut s = String::from(
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for (p, c) in POINTS {
        s.push_str(&format!(
            "{:?} {:?} {:?} {} {} {}\n",
            p[0], p[1], p[2], c[0], c[1], c[2]
        ));
    }
    s.into_bytes()
}

fn binary_points() -> Vec<u8> {
    // Extra properties before and after the used ones must be skipped.
    let mut b = b"ply\nformat binary_little_endian 1.0\ncomment made by hand\nelement vertex 3\n\
property double x\nproperty double y\nproperty double z\nproperty short label\n\
property uchar red\nproperty uchar green\nproperty uchar blue\nproperty float confidence\n\
element face 0\nproperty list uchar int vertex_indices\nend_header\n"
        .to_vec();
    for (i, (p, c)) in POINTS.iter().enumerate() {
        for v in p {
            b.extend_from_slice(&(*v as f64).to_le_bytes());
        }
        b.extend_from_slice(&(i as i16 - 1).to_le_bytes());
        b.extend_from_slice(c);
        b.extend_from_slice(&0.75f32.to_le_bytes());
    }
    b
}

#[test]
fn binary_and_ascii_points_agree() {
    let a = parse_points(&ascii_points()).unwrap();
    let b = parse_points(&binary_points()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    for (k, (p, c)) in POINTS.iter().enumerate() {
        assert_eq!(a.positions[k], p.map(f64::from));
        assert_eq!(a.colors[k], *c);
    }
}

#[test]
fn untagged_degree_one_splat_file_loads() {
    // Property layout of the common Gaussian splat export, degree 1.
    let mut names = vec![
        "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
    ];
    let rest: Vec<String> = (0..9).map(|i| format!("f_rest_{i}")).collect();
    names.extend(rest.iter().map(String::as_str));
    names.extend([
        "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    ]);
    let mut b = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n".to_vec();
    for n in &names {
        b.extend_from_slice(format!("property float {n}\n").as_bytes());
    }
    b.extend_from_slice(b"end_header\n");
    let values: Vec<f32> = (0..names.len()).map(|i| i as f32 * 0.5 - 3.0).collect();
    for v in &values {
        b.extend_from_slice(&v.to_le_bytes());
    }
    let at = |n: &str| values[names.iter().position(|m| *m == n).unwrap()] as f64;

    let cloud = parse_checkpoint(&b).unwrap();
    assert_eq!(cloud.len(), 1);
    assert_eq!(cloud.sh_degree(), 1);
    let g = cloud.get(0);
    assert_eq!(g.position().as_slice(), &[at("x"), at("y"), at("z")]);
    let sh = g.sh_coeffs();
    assert_eq!(sh[0], [at("f_dc_0"), at("f_dc_1"), at("f_dc_2")]);
    // Rest coefficients are stored per channel: f_rest_{c*3 + k}.
    for k in 0..3 {
        for (c, v) in sh[1 + k].iter().enumerate() {
            assert_eq!(*v, at(&format!("f_rest_{}", c * 3 + k)));
        }
    }
    assert_eq!(g.opacity_logit(), at("opacity"));
    assert_eq!(g.log_scale(), [at("scale_0"), at("scale_1"), at("scale_2")]);
    assert_eq!(
        g.raw_rotation(),
        [at("rot_0"), at("rot_1"), at("rot_2"), at("rot_3")]
    );
}
