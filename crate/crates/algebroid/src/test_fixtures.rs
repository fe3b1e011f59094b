//! Hand-built algebroids shared by the unit tests in this crate. These are
//! deliberately constructed inline rather than loaded from the bundled model
//! files, so the geometric modules stay testable without the model layer.

use crate::algebroid::{AlgebroidData, SkewAlgebroid};
use crate::expr::parse;

/// Identity-anchor rank-2 bundle over the plane: the canonical symplectic
/// case once dualized.
pub fn tq_r2() -> SkewAlgebroid {
    SkewAlgebroid::new(AlgebroidData {
        name: "tq_r2".into(),
        base_coords: vec!["x".into(), "y".into()],
        frame: vec!["X1".into(), "X2".into()],
        anchor: vec![
            vec![parse("1").unwrap(), parse("0").unwrap()],
            vec![parse("0").unwrap(), parse("1").unwrap()],
        ],
        structure: vec![],
        params: vec![],
        chart: None,
        lie_algebroid: true,
    })
    .unwrap()
}

/// Zero bracket but an anchor whose image drops rank on the x-axis; the
/// induced differential has nonzero square even though the structure
/// functions vanish.
pub fn rank_drop_r2() -> SkewAlgebroid {
    SkewAlgebroid::new(AlgebroidData {
        name: "rank_drop_r2".into(),
        base_coords: vec!["x".into(), "y".into()],
        frame: vec!["X1".into(), "X2".into()],
        anchor: vec![
            vec![parse("1").unwrap(), parse("0").unwrap()],
            vec![parse("0").unwrap(), parse("x*y").unwrap()],
        ],
        structure: vec![],
        params: vec![],
        chart: None,
        lie_algebroid: false,
    })
    .unwrap()
}

/// Rank-4 bundle over a circle coordinate with constant structure functions,
/// the reduced two-body spinning model at unit inertias.
pub fn beanie() -> SkewAlgebroid {
    let k = "sqrt(I2/(I1*(I1+I2)))";
    let l = "1/sqrt(I1+I2)";
    SkewAlgebroid::new(AlgebroidData {
        name: "beanie".into(),
        base_coords: vec!["psi".into()],
        frame: vec!["X1".into(), "X2".into(), "X3".into(), "X4".into()],
        anchor: vec![
            vec![parse("sqrt((I1+I2)/(I1*I2))").unwrap()],
            vec![parse("0").unwrap()],
            vec![parse("0").unwrap()],
            vec![parse("0").unwrap()],
        ],
        structure: vec![
            (0, 1, 2, parse(&format!("-{k}")).unwrap()),
            (0, 2, 1, parse(k).unwrap()),
            (1, 3, 2, parse(&format!("-{l}")).unwrap()),
            (2, 3, 1, parse(l).unwrap()),
        ],
        params: vec![("I1".into(), 1.0), ("I2".into(), 1.0)],
        chart: None,
        lie_algebroid: true,
    })
    .unwrap()
}

/// Reduced snakeboard bundle with an adjustable rotor inertia; the structure
/// functions depend on the first base coordinate.
pub fn snakeboard(j1: f64) -> SkewAlgebroid {
    let f = "(J0-J0^2*sin(phi)^2/(m*r^2))";
    let g0 = format!("J0*cos(phi)/(r*sqrt(2*J1*m*{f}))");
    SkewAlgebroid::new(AlgebroidData {
        name: "snakeboard".into(),
        base_coords: vec!["phi".into(), "psi".into()],
        frame: vec!["X1".into(), "X2".into(), "X3".into()],
        anchor: vec![
            vec![parse("1/sqrt(2*J1)").unwrap(), parse("0").unwrap()],
            vec![parse("0").unwrap(), parse(&format!("1/sqrt({f})")).unwrap()],
            vec![parse("0").unwrap(), parse("0").unwrap()],
        ],
        structure: vec![
            (0, 1, 2, parse(&format!("-{g0}")).unwrap()),
            (0, 2, 1, parse(&g0).unwrap()),
        ],
        params: vec![
            ("m".into(), 1.0),
            ("r".into(), 1.0),
            ("J0".into(), 0.5),
            ("J1".into(), j1),
        ],
        chart: None,
        lie_algebroid: false,
    })
    .unwrap()
}

/// Rolling two-wheeled body over the plane-with-headings chart: rank-2
/// constraint bundle inside a 5-dimensional base, orthonormal frame with
/// vanishing structure functions at any parameter values.
pub fn carriage() -> SkewAlgebroid {
    let l1 = "sqrt(a^2*J+4*C*r^2+a^2*m*r^2)";
    let l2 = "sqrt((a^2*J+2*C*r^2)*(2*C+m*a^2)*(a^2*J+4*C*r^2+a^2*m*r^2))";
    SkewAlgebroid::new(AlgebroidData {
        name: "carriage".into(),
        base_coords: vec![
            "x".into(),
            "y".into(),
            "theta".into(),
            "psi1".into(),
            "psi2".into(),
        ],
        frame: vec!["X1".into(), "X2".into()],
        anchor: vec![
            vec![
                parse(&format!("-a*r*cos(theta)/{l1}")).unwrap(),
                parse(&format!("-a*r*sin(theta)/{l1}")).unwrap(),
                parse(&format!("-a/{l1}")).unwrap(),
                parse(&format!("2*r/{l1}")).unwrap(),
                parse("0").unwrap(),
            ],
            vec![
                parse(&format!("-a*(a^2*J+2*C*r^2)*cos(theta)/{l2}")).unwrap(),
                parse(&format!("-a*(a^2*J+2*C*r^2)*sin(theta)/{l2}")).unwrap(),
                parse(&format!("a*r*(2*C+m*a^2)/{l2}")).unwrap(),
                parse(&format!("a^2*(J-m*r^2)/{l2}")).unwrap(),
                parse(&format!("(a^2*J+4*C*r^2+a^2*m*r^2)/{l2}")).unwrap(),
            ],
        ],
        structure: vec![],
        params: vec![
            ("m".into(), 1.0),
            ("J".into(), 1.0),
            ("C".into(), 1.0),
            ("a".into(), 1.0),
            ("r".into(), 1.0),
        ],
        chart: None,
        lie_algebroid: false,
    })
    .unwrap()
}

/// The two-body spinner before symmetry reduction: rank-4 bundle over the
/// planar placement chart (x, y, theta, psi) with a left-invariant
/// orthonormal frame. Quotienting by planar motions lands on [`beanie`].
pub fn beanie_full() -> SkewAlgebroid {
    let k = "sqrt(I2/(I1*(I1+I2)))";
    let l = "1/sqrt(I1+I2)";
    SkewAlgebroid::new(AlgebroidData {
        name: "beanie_full".into(),
        base_coords: vec!["x".into(), "y".into(), "theta".into(), "psi".into()],
        frame: vec!["Y1".into(), "Y2".into(), "Y3".into(), "Y4".into()],
        anchor: vec![
            vec![
                parse("0").unwrap(),
                parse("0").unwrap(),
                parse(&format!("-{k}")).unwrap(),
                parse("sqrt((I1+I2)/(I1*I2))").unwrap(),
            ],
            vec![
                parse("cos(theta)/sqrt(m)").unwrap(),
                parse("sin(theta)/sqrt(m)").unwrap(),
                parse("0").unwrap(),
                parse("0").unwrap(),
            ],
            vec![
                parse("-sin(theta)/sqrt(m)").unwrap(),
                parse("cos(theta)/sqrt(m)").unwrap(),
                parse("0").unwrap(),
                parse("0").unwrap(),
            ],
            vec![
                parse("0").unwrap(),
                parse("0").unwrap(),
                parse(l).unwrap(),
                parse("0").unwrap(),
            ],
        ],
        structure: vec![
            (0, 1, 2, parse(&format!("-{k}")).unwrap()),
            (0, 2, 1, parse(k).unwrap()),
            (1, 3, 2, parse(&format!("-{l}")).unwrap()),
            (2, 3, 1, parse(l).unwrap()),
        ],
        params: vec![("m".into(), 1.0), ("I1".into(), 1.0), ("I2".into(), 1.0)],
        chart: None,
        lie_algebroid: true,
    })
    .unwrap()
}
