//! Analytic fields of the benchmark cases.

use serde::{Deserialize, Serialize};

use crate::mesh::Point;

/// Cubic displacement field of a plate `[0,K]×[0,H]×[0,T]`, equilibrated by
/// a body force linear in `x` and quadratic surface tractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicField {
    pub young: f64,
    pub poisson: f64,
    pub force: f64,
    /// Plate length `K`.
    pub length: f64,
}

impl Default for CubicField {
    fn default() -> Self {
        Self { young: 36.5, poisson: 0.2, force: 1.0, length: 2.0 }
    }
}

impl CubicField {
    fn scale(&self) -> f64 {
        let nu = self.poisson;
        (nu + 1.0) * (1.0 - 2.0 * nu) * self.force / self.young
    }

    fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.young, self.poisson);
        (e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu)))
    }

    pub fn displacement(&self, p: Point) -> [f64; 3] {
        let [x, y, z] = p;
        let (c, nu, k) = (self.scale(), self.poisson, self.length);
        [
            c * (x * x * (k / 2.0 - x / 3.0) + 2.0 * nu * (y * y - z * z)),
            -c * 4.0 * nu * x * y,
            c * 4.0 * nu * x * z,
        ]
    }

    /// `g[i][j] = ∂u_i/∂x_j`.
    pub fn gradient(&self, p: Point) -> [[f64; 3]; 3] {
        let [x, y, z] = p;
        let (c, nu, k) = (self.scale(), self.poisson, self.length);
        [
            [c * (k * x - x * x), c * 4.0 * nu * y, -c * 4.0 * nu * z],
            [-c * 4.0 * nu * y, -c * 4.0 * nu * x, 0.0],
            [c * 4.0 * nu * z, 0.0, c * 4.0 * nu * x],
        ]
    }

    pub fn stress(&self, p: Point) -> [[f64; 3]; 3] {
        let g = self.gradient(p);
        let (lambda, mu) = self.lame();
        let tr = g[0][0] + g[1][1] + g[2][2];
        let mut s = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] = mu * (g[i][j] + g[j][i]) + if i == j { lambda * tr } else { 0.0 };
            }
        }
        s
    }

    /// `f = −div σ = (−F(1−ν)(K − 2x), 0, 0)`.
    pub fn body_force(&self, p: Point) -> [f64; 3] {
        [-self.force * (1.0 - self.poisson) * (self.length - 2.0 * p[0]), 0.0, 0.0]
    }

    /// `σ·n` for the outward unit normal `n`.
    pub fn traction(&self, p: Point, n: [f64; 3]) -> [f64; 3] {
        let s = self.stress(p);
        [0, 1, 2].map(|i| s[i][0] * n[0] + s[i][1] * n[1] + s[i][2] * n[2])
    }
}

/// Planes `a·x + b·y + c·z + d = 0` cutting the micro-structure cube `[0,2]³`.
pub const PLANES: [[f64; 4]; 64] = [
    [0.8609265, 0.1956651, 0.4695963, -1.748384],
    [0.7195847, 0.5102510, 0.4710009, -2.943090],
    [0.5688037, 0.06691808, 0.8197465, -1.924178],
    [0.1071920, 0.6029550, 0.7905410, -1.271770],
    [0.7416569, 0.2076639, 0.6378250, -2.580966],
    [0.4863807, 0.4607817, 0.7423705, -1.215735],
    [0.2568314, 0.9470659, 0.1926236, -1.424000],
    [0.7151591, 0.3916348, 0.5789384, -1.921521],
    [0.1054744, 0.9844276, 0.1406325, -1.712618],
    [0.6326948, 0.2613305, 0.7289744, -1.181465],
    [0.2716518, 0.9055059, 0.3259821, -1.135105],
    [0.6398444, 0.3745431, 0.6710563, -2.180073],
    [0.5836437, 0.5275241, 0.6173154, -2.052645],
    [0.5684090, 0.1764028, 0.8036127, -1.657721],
    [0.8197048, 0.1024631, 0.5635471, -2.360125],
    [0.1274946, 0.7139698, 0.6884709, -2.370968],
    [0.7305503, 0.1398926, 0.6683758, -0.9220794],
    [0.4882044, 0.5858453, 0.6468708, -0.5461269],
    [0.7241275, 0.5738369, 0.3825579, -2.412523],
    [0.3979635, 0.3684848, 0.8401452, -1.930610],
    [0.8650248, 0.1441708, 0.4805693, -1.795212],
    [0.8572357, 0.4653565, 0.2204320, -1.902939],
    [0.8669178, 0.1284323, 0.4816210, -2.635038],
    [0.1543033, 0.7715167, 0.6172134, -1.961483],
    [0.4793697, 0.7989495, 0.3631589, -1.759905],
    [0.1659080, 0.2156804, 0.9622663, -0.6748800],
    [0.2468854, 0.7715167, 0.5863527, -0.6423204],
    [0.5649452, 0.6013933, 0.5649452, -1.464101],
    [0.4231527, 0.8711968, 0.2489134, -1.657172],
    [0.6388813, 0.5525460, 0.5352789, -1.462725],
    [0.6333450, 0.4446890, 0.6333450, -2.730715],
    [0.2433962, 0.2920754, 0.9249055, -2.773892],
    [0.3298492, 0.7985822, 0.5034540, -2.098559],
    [0.1632993, 0.4082483, 0.8981462, -2.001109],
    [0.5423839, 0.6693248, 0.5077637, -0.9228155],
    [0.6018227, 0.5249942, 0.6018227, -1.695434],
    [0.9093977, 0.3247849, 0.2598279, -2.058806],
    [0.8230470, 0.5534282, 0.1277142, -0.7484869],
    [0.4433384, 0.1313595, 0.8866768, -0.8443746],
    [0.6734445, 0.6884099, 0.2693778, -1.324568],
    [0.2972254, 0.9145396, 0.2743619, -2.464607],
    [0.7218661, 0.3925938, 0.5698943, -2.207026],
    [0.5392394, 0.6564654, 0.5275168, -2.088212],
    [0.3743731, 0.06606583, 0.9249217, -1.333261],
    [0.1427762, 0.1665723, 0.9756376, -0.5186730],
    [0.4939317, 0.2798946, 0.8232196, -1.744109],
    [0.7648147, 0.07114555, 0.6403100, -1.913092],
    [0.8026276, 0.2390806, 0.5464699, -2.138411],
    [0.7220829, 0.6804243, 0.1249759, -1.493591],
    [0.5806682, 0.5806682, 0.5706566, -1.237695],
    [0.8945864, 0.4388537, 0.08439495, -1.095704],
    [0.3212124, 0.4534764, 0.8313734, -1.009433],
    [0.9747546, 0.05415304, 0.2166121, -1.855889],
    [0.5572679, 0.6868651, 0.4665499, -2.181626],
    [0.4943023, 0.8687737, 0.02995771, -0.7418343],
    [0.4652615, 0.6203487, 0.6314263, -1.781062],
    [0.3647265, 0.4103173, 0.8358315, -0.9762100],
    [0.5807795, 0.5915347, 0.5592691, -1.467443],
    [0.9473874, 0.2368468, 0.2153153, -1.995499],
    [0.9486833, 0.3162278, 0.0, -1.061239],
    [0.0, 0.8602915, 0.5098024, -0.3024251],
    [0.9363292, 0.0, 0.3511234, -0.9363292],
    [0.9805807, 0.0, 0.1961161, -1.668649],
    [0.0, 0.1240347, 0.9922779, -0.9292094],
];

/// Piecewise-constant modulus: each region cut out by the planes gets a
/// modulus drawn from its side pattern by a fixed hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Microstructure {
    pub planes: Vec<[f64; 4]>,
    pub young_min: f64,
    pub young_max: f64,
}

impl Microstructure {
    /// The first `count` planes with moduli in `[young_min, young_max]`.
    pub fn new(count: usize, young_min: f64, young_max: f64) -> Self {
        Self { planes: PLANES[..count.min(PLANES.len())].to_vec(), young_min, young_max }
    }

    /// Bit `i` is set when the point lies on the positive side of plane `i`.
    pub fn region_code(&self, p: Point) -> u64 {
        self.planes.iter().enumerate().fold(0u64, |code, (i, q)| {
            if q[0] * p[0] + q[1] * p[1] + q[2] * p[2] + q[3] > 0.0 {
                code | 1 << i
            } else {
                code
            }
        })
    }

    /// Log-uniform in `[young_min, young_max]`; `young_min` without planes.
    pub fn young(&self, p: Point) -> f64 {
        if self.planes.is_empty() {
            return self.young_min;
        }
        let u = (splitmix64(self.region_code(p) ^ (self.planes.len() as u64) << 56) >> 11) as f64 / (1u64 << 53) as f64;
        self.young_min * (self.young_max / self.young_min).powf(u)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Damaged band between two coaxial cones of axis `y`, cut by two planes
/// `y = bottom` and `y = top`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeDamage {
    /// Half angle at the apex, degrees.
    pub theta_deg: f64,
    /// Apex of the outer cone.
    pub apex_outer: f64,
    /// Apex of the inner cone.
    pub apex_inner: f64,
    pub bottom: f64,
    /// Damage stage: upper end of the band.
    pub top: f64,
}

impl Default for ConeDamage {
    fn default() -> Self {
        Self { theta_deg: 35.0, apex_outer: -545.08, apex_inner: -531.31, bottom: -469.0, top: -400.0 }
    }
}

impl ConeDamage {
    fn trig(&self) -> (f64, f64) {
        let t = self.theta_deg.to_radians();
        (t.cos(), t.sin())
    }

    pub fn in_envelope(&self, p: Point) -> bool {
        let [x, y, z] = p;
        let (c, s) = self.trig();
        let r2 = (x * x + z * z) * c * c;
        r2 < (y - self.apex_outer).powi(2) * s * s && r2 > (y - self.apex_inner).powi(2) * s * s && self.bottom < y && y < self.top
    }

    /// Half the distance between the two lateral surfaces.
    pub fn half_thickness(&self) -> f64 {
        0.5 * (self.apex_inner - self.apex_outer).abs() * self.trig().1
    }

    /// Distance to the cone midway between the two lateral surfaces.
    pub fn mid_distance(&self, p: Point) -> f64 {
        let (c, s) = self.trig();
        let mid = 0.5 * (self.apex_outer + self.apex_inner);
        let r = (p[0] * p[0] + p[2] * p[2]).sqrt();
        (r * c - (p[1] - mid) * s).abs()
    }

    /// 0 outside the envelope; inside, 1 within half a half-thickness of the
    /// mid surface, decreasing linearly to 0 at the lateral surfaces.
    pub fn damage(&self, p: Point) -> f64 {
        if !self.in_envelope(p) {
            return 0.0;
        }
        (2.0 * (1.0 - self.mid_distance(p) / self.half_thickness())).clamp(0.0, 1.0)
    }
}
