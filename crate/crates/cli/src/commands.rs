//! Subcommand bodies. Each returns a JSON summary and writes its files.

use std::f64::consts::PI;

use anyhow::{bail, Context, Result};
use mqc_core::engine::{CouplingSpec, Engine, EngineConfig, EngineOutput, Peak};
use mqc_core::estimators::{
    collision_rate, doppler_rms, mean_distance, pulse_area, velocity_class_density, VaporComposition, VaporSpecies,
};
use mqc_core::kernel::InteractionMode;
use mqc_core::oracle::{
    demodulate_record, fit_amplitudes, group_statistic, monte_carlo_disorder, simulate_cycles, weighted_mean_se,
    DisorderConfig, Modulation, OracleAtom, OracleConfig, OraclePair, Sampler,
};
use mqc_core::species::{emission_pattern, Species};
use mqc_core::spectra::{anisotropy, default_grid, rescale_and_assemble, Rescaling, Spectrum, SpectrumConfig};
use mqc_core::C64;
use nalgebra::Vector3;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ModeName, RunConfig};
use crate::output::{num, Series, Sink, Table};

struct Runs {
    x: EngineOutput,
    y: EngineOutput,
}

fn run_engine(cfg: &RunConfig, species: &Species, mode: ModeName) -> Result<Runs> {
    let pulses = cfg.section(&cfg.pulses, "pulses")?;
    let inter = cfg.section(&cfg.interaction, "interaction")?;
    let coupling = cfg.coupling(mode)?;
    let engine = Engine::new(EngineConfig {
        species: species.clone(),
        pulse_area: pulses.area,
        detector: cfg.detector()?,
        order_max: if coupling.is_some() { inter.order_max } else { 0 },
        coupling,
        quadrature: cfg.quadrature()?,
        interactions_between_pulses: false,
    })
    .context("engine")?;
    Ok(Runs {
        x: engine.run(&Vector3::x())?,
        y: engine.run(&Vector3::y())?,
    })
}

struct SpectrumSetup {
    rescaling: Rescaling,
    doppler: f64,
    grid_points: usize,
    four_pulse: bool,
    normalize: bool,
}

impl SpectrumSetup {
    fn new(cfg: &RunConfig, species: &Species) -> Result<Self> {
        let s = cfg.section(&cfg.spectrum, "spectrum")?;
        let rescaling = Rescaling::new(s.n_det, s.k0.0, s.r_bar.0);
        rescaling.validate().context("spectrum")?;
        if rescaling.far_field_warning() {
            eprintln!("warning: k0 r_bar = {:.3} is small for the far-field picture", rescaling.u());
        }
        Ok(SpectrumSetup {
            rescaling,
            doppler: cfg.doppler_rms(species)?,
            grid_points: s.grid_points,
            four_pulse: s.four_pulse_equivalence,
            normalize: s.normalize,
        })
    }

    fn build(&self, species: &Species, out: &EngineOutput, kappa: i32, norm: Option<f64>) -> Result<Spectrum> {
        let c = SpectrumConfig {
            kappa,
            rescaling: self.rescaling,
            doppler_rms: Some(self.doppler),
            grid: default_grid(species, kappa, self.doppler, self.grid_points),
            four_pulse_equivalence: self.four_pulse,
            normalization: norm,
        };
        Ok(rescale_and_assemble(&out.terms, &c)?)
    }

    /// `|y-polarised 1QC D2 peak|` when normalisation is on.
    fn norm(&self, species: &Species, runs: &Runs) -> Result<Option<f64>> {
        if !self.normalize {
            return Ok(None);
        }
        let s = self.build(species, &runs.y, 1, None)?;
        match s.peak(Peak::D2) {
            Some(p) if p.amplitude > 0.0 => Ok(Some(p.amplitude)),
            _ => bail!("spectrum.normalize: the y-polarised D2 peak is zero"),
        }
    }
}

#[derive(Serialize)]
struct PeakRow {
    mode: String,
    kappa: i32,
    peak: Peak,
    center_rad_s: f64,
    a_x: f64,
    a_y: f64,
    ratio: f64,
}

fn peak_rows(mode: ModeName, kappa: i32, sx: &Spectrum, sy: &Spectrum) -> Result<Vec<PeakRow>> {
    Ok(anisotropy(sx, sy)?
        .into_iter()
        .map(|r| PeakRow {
            mode: mode.label().into(),
            kappa,
            peak: r.peak,
            center_rad_s: sx.peak(r.peak).map(|p| p.center).unwrap_or(f64::NAN),
            a_x: r.a_x,
            a_y: r.a_y,
            ratio: r.ratio,
        })
        .collect())
}

fn peak_table(rows: &[PeakRow]) -> Table {
    let mut t = Table::new(["mode", "kappa", "peak", "center_rad_s", "a_x", "a_y", "ratio"]);
    for r in rows {
        t.push(vec![
            r.mode.clone(),
            r.kappa.to_string(),
            r.peak.to_string(),
            num(r.center_rad_s),
            num(r.a_x),
            num(r.a_y),
            num(r.ratio),
        ]);
    }
    t
}

pub fn spectrum(cfg: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let species = cfg.species()?;
    let mode = cfg.section(&cfg.interaction, "interaction")?.mode;
    let setup = SpectrumSetup::new(cfg, &species)?;
    let runs = run_engine(cfg, &species, mode)?;
    let norm = setup.norm(&species, &runs)?;
    let mut rows = Vec::new();
    for kappa in [1, 2] {
        let sx = setup.build(&species, &runs.x, kappa, norm)?;
        let sy = setup.build(&species, &runs.y, kappa, norm)?;
        let mut t = Table::new(["omega_rad_s", "x_re", "x_im", "x_abs", "y_re", "y_im", "y_abs"]);
        for i in 0..sx.omega.len() {
            let (a, b) = (sx.values[i], sy.values[i]);
            t.push(vec![num(sx.omega[i]), num(a.re), num(a.im), num(a.norm()), num(b.re), num(b.im), num(b.norm())]);
        }
        sink.csv(&format!("spectrum_k{kappa}"), &t)?;
        let thz: Vec<f64> = sx.omega.iter().map(|w| w / (2.0 * PI * 1e12)).collect();
        let curve = |label: &str, s: &Spectrum| Series {
            label: label.into(),
            x: thz.clone(),
            y: s.values.iter().map(|v| v.norm()).collect(),
        };
        sink.svg(
            &format!("spectrum_k{kappa}"),
            &format!("kappa = {kappa}"),
            "frequency (THz)",
            &[curve("x", &sx), curve("y", &sy)],
        )?;
        rows.extend(peak_rows(mode, kappa, &sx, &sy)?);
    }
    sink.csv("peaks", &peak_table(&rows))?;
    sink.json("peaks", &rows)?;
    Ok(json!({ "peaks": rows, "normalization": norm, "doppler_rms_rad_s": setup.doppler }))
}

pub fn anisotropy_cmd(cfg: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let species = cfg.species()?;
    let modes = &cfg.section(&cfg.anisotropy, "anisotropy")?.modes;
    if modes.is_empty() {
        bail!("anisotropy.modes is empty");
    }
    let setup = SpectrumSetup::new(cfg, &species)?;
    let mut rows = Vec::new();
    for &mode in modes {
        let runs = run_engine(cfg, &species, mode)?;
        for kappa in [1, 2] {
            let sx = setup.build(&species, &runs.x, kappa, None)?;
            let sy = setup.build(&species, &runs.y, kappa, None)?;
            rows.extend(peak_rows(mode, kappa, &sx, &sy)?);
        }
    }
    sink.csv("anisotropy", &peak_table(&rows))?;
    sink.json("anisotropy", &rows)?;
    for r in &rows {
        println!("{:<20} {:<5} A_y/A_x = {:.4}", r.mode, r.peak.to_string(), r.ratio);
    }
    Ok(json!({ "ratios": rows }))
}

#[derive(Serialize)]
struct VelocityRow {
    fraction: f64,
    dv_m_s: f64,
    probability: f64,
    density_m3: f64,
    r_bar_m: f64,
}

pub fn estimate(cfg: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let species = cfg.species()?;
    let e = cfg.section(&cfg.estimate, "estimate")?;
    let theta = pulse_area(e.intensity.0, e.pulse_duration.0, e.dipole.0).context("estimate")?;
    let mut classes = Vec::new();
    for &f in &e.displacement_fractions {
        let v = velocity_class_density(e.n0.0, e.v_bar.0, e.wavelength.0, e.tau_spont.0, f).context("estimate")?;
        classes.push(VelocityRow {
            fraction: f,
            dv_m_s: v.dv,
            probability: v.p,
            density_m3: v.density,
            r_bar_m: mean_distance(v.density)?,
        });
    }
    let vapor = VaporComposition {
        species: e
            .vapor
            .iter()
            .map(|v| VaporSpecies {
                name: v.name.clone(),
                density: v.density.0,
                radius: v.radius.0,
                mass: v.mass.0,
            })
            .collect(),
        temperature: e.temperature.0,
    };
    let rates = collision_rate(&vapor, &e.target).context("estimate")?;
    let doppler = doppler_rms(e.temperature.0, species.mass, species.k0())?;

    let mut t = Table::new(["species", "density_m3", "cross_section_m2", "rel_velocity_m_s", "rate_hz", "time_s"]);
    println!(
        "{:<8} {:>12} {:>12} {:>10} {:>10} {:>10}",
        "species", "n (m^-3)", "sigma (m^2)", "v (m/s)", "rate (Hz)", "1/rate (s)"
    );
    for p in &rates.partners {
        println!(
            "{:<8} {:>12.3e} {:>12.3e} {:>10.0} {:>10.3} {:>10.3}",
            p.name, p.density, p.cross_section, p.relative_velocity, p.rate, p.time
        );
        t.push(vec![p.name.clone(), num(p.density), num(p.cross_section), num(p.relative_velocity), num(p.rate), num(p.time)]);
    }
    println!("{:<8} {:>12.3e} {:>12} {:>10} {:>10.3} {:>10.3}", "total", rates.total_density, "", "", rates.total, rates.time);
    t.push(vec!["total".into(), num(rates.total_density), String::new(), String::new(), num(rates.total), num(rates.time)]);
    println!("pulse area theta0 = {theta:.4} rad");
    for c in &classes {
        println!(
            "displacement {:.4} lambda: p = {:.3e}, n_vc = {:.4e} m^-3, r_bar = {:.3} cm",
            c.fraction,
            c.probability,
            c.density_m3,
            c.r_bar_m * 100.0
        );
    }
    println!(
        "Doppler rms = 2 pi x {:.1} MHz, FWHM = 2 pi x {:.1} MHz",
        doppler.rms / (2.0 * PI * 1e6),
        doppler.fwhm / (2.0 * PI * 1e6)
    );
    sink.csv("collisions", &t)?;
    let result = json!({
        "pulse_area_rad": theta,
        "velocity_classes": classes,
        "collisions": rates,
        "doppler": doppler,
    });
    sink.json("estimate", &result)?;
    Ok(result)
}

pub fn emission(cfg: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let species = cfg.species()?;
    let e = cfg.section(&cfg.emission, "emission")?;
    if e.theta_points < 2 {
        bail!("emission.theta_points must be at least 2");
    }
    let thetas: Vec<f64> = (0..e.theta_points).map(|i| PI * i as f64 / (e.theta_points - 1) as f64).collect();
    let mut cols = vec!["theta_rad".to_string()];
    let mut patterns = Vec::new();
    let mut summary = Vec::new();
    for c in &e.cases {
        if c.manifold == 0 || c.manifold >= species.manifolds.len() {
            bail!("emission case `{}`: manifold {} does not exist", c.label, c.manifold);
        }
        let p = emission_pattern(&species, c.manifold, &c.populations).with_context(|| format!("emission case `{}`", c.label))?;
        let totals: Vec<f64> = thetas.iter().map(|&t| p.at(t).total).collect();
        let (lo, hi) = totals.iter().fold((f64::INFINITY, 0.0f64), |a, &v| (a.0.min(v), a.1.max(v)));
        summary.push(json!({ "label": c.label, "min": lo, "max": hi, "flat": hi - lo <= 1e-12 * hi.max(f64::MIN_POSITIVE) }));
        for k in ["pi", "sigma", "total"] {
            cols.push(format!("{} {k}", c.label));
        }
        patterns.push(p);
    }
    let mut t = Table::new(cols);
    for &th in &thetas {
        let mut row = vec![num(th)];
        for p in &patterns {
            let s = p.at(th);
            row.extend([num(s.pi), num(s.sigma), num(s.total)]);
        }
        t.push(row);
    }
    sink.csv("emission", &t)?;
    let series: Vec<Series> = e
        .cases
        .iter()
        .zip(&patterns)
        .map(|(c, p)| Series {
            label: c.label.clone(),
            x: thetas.iter().map(|t| t.to_degrees()).collect(),
            y: thetas.iter().map(|&t| p.at(t).total).collect(),
        })
        .collect();
    sink.svg("emission", "total emission", "theta (deg)", &series)?;
    let result = json!({ "cases": summary });
    sink.json("emission", &result)?;
    Ok(result)
}

#[derive(Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn oracle_base(cfg: &RunConfig, species: &Species, mode: Option<InteractionMode>, atoms: usize) -> Result<OracleConfig> {
    let o = cfg.section(&cfg.oracle, "oracle")?;
    let area = cfg.section(&cfg.pulses, "pulses")?.area;
    let g = species.gamma;
    Ok(OracleConfig {
        species: species.clone(),
        areas: [area, area],
        polarization: Vector3::x(),
        atoms: vec![OracleAtom::at_rest(0.0); atoms],
        mode,
        pairs: if atoms == 2 {
            vec![OraclePair {
                a: 0,
                b: 1,
                u: o.separation,
                n_hat: Vector3::z(),
            }]
        } else {
            Vec::new()
        },
        modulation: Modulation::from_bins(o.bins, o.cycles, o.cycle_lifetimes / g),
        taus: o.taus_lifetimes.iter().map(|t| t / g).collect(),
        couple_between_pulses: false,
        detector: cfg.detector()?,
        tolerance: o.tolerance,
    })
}

/// Runs the canned engine-vs-oracle suite; the boolean is the overall verdict.
pub fn validate(cfg: &RunConfig, sink: &mut Sink) -> Result<(bool, Value)> {
    let species = cfg.species()?;
    let o = cfg.section(&cfg.oracle, "oracle")?;
    let mode = cfg.section(&cfg.interaction, "interaction")?.mode;
    let interaction = mode.interaction().context("validate needs an interaction mode other than off")?;
    let mut checks = Vec::new();

    let two = simulate_cycles(&oracle_base(cfg, &species, None, 2)?)?;
    let base1 = oracle_base(cfg, &species, None, 1)?;
    let one = simulate_cycles(&base1)?;
    let mut worst: f64 = 0.0;
    for (a, b) in two.intensities.iter().flatten().zip(one.intensities.iter().flatten()) {
        worst = worst.max((a - 2.0 * b).abs() / (2.0 * b.abs()).max(f64::MIN_POSITIVE));
    }
    checks.push(Check {
        name: "uncoupled additivity".into(),
        pass: worst <= 1e-10,
        detail: format!("max relative deviation {worst:.2e}"),
    });

    let k1 = demodulate_record(&two, 1, &base1.modulation)?;
    let k2 = demodulate_record(&two, 2, &base1.modulation)?;
    let leak = k2.iter().zip(&k1).map(|(a, b)| a.norm() / b.norm()).fold(0.0, f64::max);
    checks.push(Check {
        name: "uncoupled kappa=2 vanishes".into(),
        pass: leak <= 1e-8,
        detail: format!("|kappa=2| / |kappa=1| = {leak:.2e}"),
    });

    let u = o.separation;
    let engine = Engine::new(EngineConfig {
        species: species.clone(),
        pulse_area: cfg.section(&cfg.pulses, "pulses")?.area,
        detector: cfg.detector()?,
        coupling: Some(CouplingSpec {
            spectator: false,
            ..CouplingSpec::new(interaction, u)
        }),
        order_max: 2,
        quadrature: cfg.quadrature()?,
        interactions_between_pulses: false,
    })?
    .run(&Vector3::x())?;
    let poles: Vec<C64> = engine.for_kappa(2).map(|t| t.pole()).collect();
    let predicted: C64 = engine.for_kappa(2).map(|t| t.amplitude).sum();
    let seed = cfg.seed.unwrap_or(0);
    let disorder = |u: f64| DisorderConfig {
        u,
        sampler: Sampler::Stratified {
            phase_steps: o.phase_steps,
        },
        trials: o.trials,
        seed,
        kappas: vec![2],
    };
    let mut coupled = oracle_base(cfg, &species, Some(interaction), 2)?;
    let taus = coupled.taus.clone();
    let fit = |gm: &[Vec<C64>]| fit_amplitudes(&taus, &gm[0], &poles).map(|a| a[0]).unwrap_or(C64::new(f64::NAN, 0.0));
    let r1 = monte_carlo_disorder(&coupled, &disorder(u))?;
    let (estimate, se, method) = if interaction == InteractionMode::near_electrostatic() {
        // T scales as u^-3: doubling the order-2 amplitude cancels the order-4 remainder.
        let u2 = u * 2f64.powf(1.0 / 6.0);
        coupled.pairs[0].u = u2;
        let r2 = monte_carlo_disorder(&coupled, &disorder(u2))?;
        let vals: Vec<C64> = r1.group_means.iter().zip(&r2.group_means).map(|(a, b)| 4.0 * fit(b) - fit(a)).collect();
        let (m, s) = weighted_mean_se(vals, &r1.group_sizes);
        (m, s, "extrapolated to order 2")
    } else {
        let (m, s) = group_statistic(&r1, fit);
        (m, s, "single separation")
    };
    let nse = (estimate - predicted).norm() / se;
    checks.push(Check {
        name: "engine vs oracle kappa=2".into(),
        pass: nse <= o.max_standard_errors,
        detail: format!(
            "engine {predicted:.6e}, oracle {estimate:.6e} +- {se:.2e} ({method}, {} trials): {nse:.2} SE, relative {:.2e}",
            r1.trials,
            ((estimate - predicted) / predicted).norm()
        ),
    });

    let pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let result = json!({ "pass": pass, "checks": checks });
    sink.json("validate", &result)?;
    Ok((pass, result))
}
