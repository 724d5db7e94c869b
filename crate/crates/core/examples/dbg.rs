use sepdiff_core::melnikov::*;
use sepdiff_core::model::{ModelSpec, PerturbationSpec};
use sepdiff_core::geom;

fn main() {
    let model = ModelSpec::model_a();
    let pert = PerturbationSpec::model_a_diffusion(0.05, 0.5);
    let field = MelnikovField::new(&model, &pert);
    let k = [1, -1, 0];
    let eta = [0.5, 0.5];
    let beta = [1.0, 0.0];
    let sec = construct_section_for_direction(&field, 1, &eta, &k, &beta, 0.0, 64).unwrap().section;
    // gradient scale
    let (_, s1, _) = field.c2_scale(1, &eta).unwrap();
    println!("s1 = {s1:.3}");
    let mut gmax: f64 = 0.0;
    let mut gvals = vec![];
    for x in &sec.samples {
        let jet = field.theta_jet(1, &eta, x).unwrap();
        gmax = gmax.max(geom::norm(&jet.grad));
        gvals.push(jet.grad[..2].to_vec());
    }
    println!("section |grad| max = {gmax:.3}");
    // walk a winding from a sample zeta
    let zeta = [0.37, 0.81];
    let nu = model.nu_hat(&eta);
    let res = model.residual(&eta, &k[..2], k[2]);
    let kf = [1.0, -1.0];
    let phi0 = geom::frac(zeta[0]*kf[0] + zeta[1]*kf[1]);
    let m = sec.samples.len();
    let mut best_crit: f64 = 1e9;
    let mut best_pair: f64 = 1e9;
    let mut printed = 0;
    for i in 0..300 {
        let s = i as f64 * 0.02;
        let xi = [geom::frac(zeta[0]-nu[0]*s), geom::frac(zeta[1]-nu[1]*s)];
        let phi = geom::frac(phi0 - res*s);
        let node = ((phi * m as f64).round() as usize) % m;
        let d = field.directional(1, &eta, &xi, s).unwrap();
        let g = &gvals[node];
        let mm = ((d.theta_xi[0]-g[0]).powi(2)+(d.theta_xi[1]-g[1]).powi(2)).sqrt();
        best_crit = best_crit.min(d.d_theta.abs());
        if d.d_theta.abs() < 0.4 {
            best_pair = best_pair.min(mm);
            if printed < 12 {
                println!("s={s:.2} dTheta={:+.3} mismatch={:.3} theta_xi=({:+.2},{:+.2}) G=({:+.2},{:+.2})", d.d_theta, mm, d.theta_xi[0], d.theta_xi[1], g[0], g[1]);
                printed += 1;
            }
        }
    }
    println!("best |dTheta| = {best_crit:.4}, best mismatch at near-critical = {best_pair:.4}");
}
