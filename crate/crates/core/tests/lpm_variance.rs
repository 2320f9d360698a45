use frfkit::frf::{lpm_frf, LpmConfig};
use frfkit::signal::{draw_phases, multisine_period};
use frfkit::spectral::dft_period;
use frfkit::synth::{simulate_plant, PlantSpec};
use frfkit::Complex64;

const N: usize = 4096;
const SIGMA: f64 = 0.02;
const RUNS: usize = 100;

fn resonant(noise_seed: u64) -> PlantSpec {
    PlantSpec::lti(vec![0.05, 0.05], vec![1.0, -1.6, 0.9]).with_noise(SIGMA, noise_seed)
}

#[test]
fn lpm_noise_variance_tracks_monte_carlo_scatter() {
    let bins: Vec<usize> = (20..=400).collect();
    let phases = draw_phases(21, 0, bins.len());
    let u = multisine_period(N, &bins, &phases, 1.0);
    let uspec = dft_period(&u, 1.0);
    let cfg = LpmConfig::default();

    let mut g_runs: Vec<Vec<Complex64>> = Vec::new();
    let mut var_sum = vec![0.0; bins.len()];
    for run in 0..RUNS {
        let y = simulate_plant(&resonant(1000 + run as u64), &u, 1, 3, 0).unwrap();
        let est = lpm_frf(&uspec, &dft_period(&y, 1.0), &bins, &cfg).unwrap();
        for (s, v) in var_sum.iter_mut().zip(est.noise_variance.as_ref().unwrap()) {
            *s += v;
        }
        g_runs.push(est.g);
    }

    let mut ratios = Vec::new();
    let mut naive_ratios = Vec::new();
    for j in 0..bins.len() {
        let mean: Complex64 = g_runs.iter().map(|g| g[j]).sum::<Complex64>() / RUNS as f64;
        let mc_var =
            g_runs.iter().map(|g| (g[j] - mean).norm_sqr()).sum::<f64>() / (RUNS - 1) as f64;
        ratios.push(var_sum[j] / RUNS as f64 / mc_var);
        // single-bin division variance: sigma^2 / (N |U|^2)
        let naive = SIGMA * SIGMA / N as f64 / uspec.coefficients[bins[j]].norm_sqr();
        naive_ratios.push(naive / mc_var);
    }
    ratios.sort_by(f64::total_cmp);
    naive_ratios.sort_by(f64::total_cmp);
    let med = ratios[ratios.len() / 2];
    eprintln!(
        "leverage form median ratio {med:.3}, single-bin form {:.3}",
        naive_ratios[naive_ratios.len() / 2]
    );
    assert!((0.7..=1.3).contains(&med), "median ratio {med}");
}
