use geolab::flow::*;
use geolab::Surface;
fn main() {
    let s = Surface::ellipsoid(2.0, 2f64.sqrt(), 1.0);
    let s0 = PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 0.6, 0.8]);
    let t = std::time::Instant::now();
    let tr = integrate(&s, &s0, 100.0, &FlowSettings::default()).unwrap();
    let d = [0.25, 0.5, 1.0];
    let i0 = joachimsthal(&d, &s0);
    let m = tr.states.iter().map(|s| ((joachimsthal(&d, s) - i0) / i0).abs()).fold(0.0, f64::max);
    println!("{:?} steps {} rej {} drift {:e} joach {:e}", t.elapsed(), tr.stats.steps, tr.stats.rejected, tr.stats.max_energy_drift, m);
}
