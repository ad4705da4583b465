use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};
use neb_core::checkpoint;
use neb_core::data::{load_matrix, square_side, write_csv, write_image_grid, Dataset};
use neb_core::diff::{grad_check_input, grad_check_loss};
use neb_core::dynamics::{
    creative_probe, histogram, memory_flow_batch, min_distances, walk_jump, FlowConfig, FlowResult,
    InitMode, SamplerConfig,
};
use neb_core::geometry::{
    chi_stats_with_budget, disintegration_experiment, norm_concentration_probe,
    DisintegrationConfig,
};
use neb_core::train::{fit, noisy_batch};
use neb_core::{
    denoise_batch, stream_rng, ArchSpec, Energy, EnergyModel, Stream, TrainConfig, Trainable,
};
use sha2::{Digest, Sha256};

use crate::settings::{write_manifest, Settings};
use crate::Failure;

type Extra = Vec<(String, String)>;

pub fn dispatch(name: &str, s: &Settings) -> Result<(), Failure> {
    let out = s.out_dir()?;
    let extra = match name {
        "train" => train(s, &out)?,
        "denoise" => denoise(s, &out)?,
        "sample" => sample(s, &out)?,
        "memory" => memory(s, &out)?,
        "probe" => probe(s, &out)?,
        "chi" => chi(s, &out)?,
        "concentrate" => concentrate(s, &out)?,
        "disintegrate" => disintegrate(s, &out)?,
        "gradcheck" => gradcheck(s, &out)?,
        other => return Err(Failure::Usage(format!("unknown subcommand {other:?}"))),
    };
    write_manifest(&out, name, s, &extra)
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_rows(s: &Settings, key: &str, extra: &mut Extra) -> Result<Dataset, Failure> {
    let path = s.path(key)?;
    let ds = load_matrix(&path, None)?;
    extra.push((format!("{key}_sha256"), sha256_file(&path)?));
    Ok(match s.opt::<usize>("limit")? {
        Some(n) => ds.head(n),
        None => ds,
    })
}

fn load_model(s: &Settings, extra: &mut Extra) -> Result<EnergyModel, Failure> {
    let path = s.path("model")?;
    let model = checkpoint::load(&path)?;
    extra.push(("model_sha256".into(), sha256_file(&path)?));
    Ok(model)
}

/// Explicit `--sigma`, else the checkpoint's.
fn model_sigma(s: &Settings, model: &EnergyModel) -> Result<f64, Failure> {
    s.opt::<f64>("sigma")?
        .or(model.sigma_train())
        .ok_or_else(|| Failure::Usage("checkpoint carries no sigma; pass --sigma".into()))
}

fn csv(m: ArrayView2<f64>, path: PathBuf) -> Result<(), Failure> {
    write_csv(m, path).map_err(Failure::from)
}

/// Writes a PGM grid when rows are square images; returns whether it did.
fn grid(m: ArrayView2<f64>, cols: usize, path: PathBuf) -> Result<bool, Failure> {
    if m.nrows() == 0 || square_side(m.ncols()).is_none() || m.ncols() < 4 {
        return Ok(false);
    }
    let cols = cols.clamp(1, m.nrows());
    let rows = m.nrows().div_ceil(cols);
    write_image_grid(m, rows, cols, None, path)?;
    Ok(true)
}

fn mse(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    (&a - &b).mapv(|v| v * v).sum() / a.nrows() as f64
}

fn train(s: &Settings, out: &Path) -> Result<Extra, Failure> {
    let mut extra = Extra::new();
    let data = load_rows(s, "data", &mut extra)?;
    let cfg = TrainConfig {
        sigma: s.get("sigma")?,
        epochs: s.get("epochs")?,
        batch_size: s.get("batch")?,
        learning_rate: s.get("lr")?,
        adam_beta1: s.get("adam_beta1")?,
        adam_beta2: s.get("adam_beta2")?,
        adam_eps: s.get("adam_eps")?,
        seed: s.get("seed")?,
    };
    cfg.validate()?;
    let arch = ArchSpec::parse(data.dim(), &s.get::<String>("arch")?)?;
    log::info!(
        "training on {} rows of dimension {} ({} parameters)",
        data.len(),
        data.dim(),
        arch.param_count()
    );
    let mut model = EnergyModel::init(arch, cfg.seed)?;
    let epochs = cfg.epochs;
    let history = fit(&mut model, data.samples.view(), &cfg, |e, loss| {
        if e + 1 == epochs || (e + 1) % 10 == 0 {
            log::info!("epoch {:>4}  loss {loss:.6}", e + 1);
        }
    })?;
    model.set_sigma_train(cfg.sigma);
    let ckpt = out.join("model.bin");
    checkpoint::save(&model, &ckpt)?;
    let losses = Array2::from_shape_fn((history.losses.len(), 2), |(i, j)| {
        if j == 0 {
            (i + 1) as f64
        } else {
            history.losses[i]
        }
    });
    csv(losses.view(), out.join("losses.csv"))?;
    let last = history.losses.last().copied().unwrap_or(f64::NAN);
    println!("final loss {last:.6}; checkpoint {}", ckpt.display());
    extra.push(("checkpoint".into(), ckpt.display().to_string()));
    extra.push(("checkpoint_sha256".into(), sha256_file(&ckpt)?));
    extra.push(("final_loss".into(), last.to_string()));
    Ok(extra)
}

fn denoise(s: &Settings, out: &Path) -> Result<Extra, Failure> {
    let mut extra = Extra::new();
    let model = load_model(s, &mut extra)?;
    let data = load_rows(s, "data", &mut extra)?;
    let sigma = model_sigma(s, &model)?;
    let cols = s.get("grid_cols")?;
    let x = data.samples;
    let y = if s.flag("noisy")? {
        x.clone()
    } else {
        let mut rng = stream_rng(s.get("seed")?, Stream::Noise);
        let y = noisy_batch(x.view(), sigma, &mut rng);
        csv(y.view(), out.join("noisy.csv"))?;
        y
    };
    let xhat = denoise_batch(&model, y.view(), Some(sigma))?;
    csv(xhat.view(), out.join("denoised.csv"))?;
    let shown = x.nrows().min(100);
    if grid(xhat.slice(s![..shown, ..]), cols, out.join("denoised.pgm"))? {
        grid(y.slice(s![..shown, ..]), cols, out.join("noisy.pgm"))?;
        if !s.flag("noisy")? {
            grid(x.slice(s![..shown, ..]), cols, out.join("clean.pgm"))?;
        }
    }
    let d = x.ncols() as f64;
    if s.flag("noisy")? {
        println!("denoised {} rows at sigma {sigma}", x.nrows());
    } else {
        let (m_noisy, m_hat) = (mse(y.view(), x.view()), mse(xhat.view(), x.view()));
        println!(
            "mean squared error per row: noisy {m_noisy:.4}, denoised {m_hat:.4} (sigma^2 d = {:.4})",
            sigma * sigma * d
        );
        extra.push(("mse_noisy".into(), m_noisy.to_string()));
        extra.push(("mse_denoised".into(), m_hat.to_string()));
    }
    extra.push(("sigma_used".into(), sigma.to_string()));
    Ok(extra)
}

fn sample(s: &Settings, out: &Path) -> Result<Extra, Failure> {
    let mut extra = Extra::new();
    let model = load_model(s, &mut extra)?;
    let sigma = model_sigma(s, &model)?;
    let data = if s.contains("data") {
        Some(load_rows(s, "data", &mut extra)?)
    } else {
        None
    };
    let mut cfg = SamplerConfig::for_sigma(sigma);
    cfg.eps = s.opt("eps")?.unwrap_or(cfg.eps);
    cfg.jump_period = s.get("jump_period")?;
    cfg.total_steps = s.get("steps")?;
    cfg.n_chains = s.get("chains")?;
    cfg.init_mode = s.get::<String>("init")?.parse::<InitMode>()?;
    cfg.burn_in = s.get("burn_in")?;
    cfg.record_every = s.get("record_every")?;
    cfg.sigma = Some(sigma);
    cfg.seed = s.get("seed")?;
    let traces = walk_jump(&model, &cfg, data.as_ref().map(|d| d.samples.view()))?;

    let d = model.dim();
    let mut jumps = Vec::new();
    let mut jump_index = Vec::new();
    let mut energies = Vec::new();
    let mut states = Vec::new();
    for t in &traces {
        for (time, x) in &t.x_jumps {
            jumps.extend_from_slice(x);
            jump_index.extend([t.chain as f64, *time as f64]);
        }
        for ((time, y), (_, e)) in t.y_states.iter().zip(&t.energies) {
            energies.extend([t.chain as f64, *time as f64, *e]);
            states.extend([t.chain as f64, *time as f64]);
            states.extend_from_slice(y);
        }
    }
    let n_jumps = jump_index.len() / 2;
    let jumps = Array2::from_shape_vec((n_jumps, d), jumps).map_err(runtime)?;
    csv(jumps.view(), out.join("jumps.csv"))?;
    csv(
        Array2::from_shape_vec((n_jumps, 2), jump_index)
            .map_err(runtime)?
            .view(),
        out.join("jump_times.csv"),
    )?;
    let n_rec = energies.len() / 3;
    csv(
        Array2::from_shape_vec((n_rec, 3), energies)
            .map_err(runtime)?
            .view(),
        out.join("energies.csv"),
    )?;
    csv(
        Array2::from_shape_vec((n_rec, d + 2), states)
            .map_err(runtime)?
            .view(),
        out.join("states.csv"),
    )?;
    let per_chain = n_jumps / cfg.n_chains;
    grid(jumps.view(), per_chain.max(1), out.join("jumps.pgm"))?;
    println!(
        "{} chains x {} steps (eps {}), {n_jumps} jumps at sigma {sigma}",
        cfg.n_chains, cfg.total_steps, cfg.eps
    );
    extra.push(("eps_used".into(), cfg.eps.to_string()));
    extra.push(("sigma_used".into(), sigma.to_string()));
    Ok(extra)
}

fn flow_config(s: &Settings, sigma: f64) -> Result<FlowConfig, Failure> {
    let base = FlowConfig::for_sigma(sigma);
    Ok(FlowConfig {
        step_size: s.opt("step")?.unwrap_or(base.step_size),
        grad_tol: s.get("tol")?,
        max_iters: s.get("max_iters")?,
    })
}

fn write_flows(
    results: &[FlowResult],
    d: usize,
    cols: usize,
    out: &Path,
) -> Result<Array2<f64>, Failure> {
    let attractors = Array2::from_shape_fn((results.len(), d), |(i, j)| results[i].attractor[j]);
    csv(attractors.view(), out.join("attractors.csv"))?;
    let summary = Array2::from_shape_fn((results.len(), 5), |(i, j)| {
        let r = &results[i];
        match j {
            0 => r.iters as f64,
            1 => r.converged as u8 as f64,
            2 => r.final_grad_norm,
            3 => r.energies[0],
            _ => *r.energies.last().expect("start energy"),
        }
    });
    csv(summary.view(), out.join("flows.csv"))?;
    grid(attractors.view(), cols, out.join("attractors.pgm"))?;
    Ok(attractors)
}

fn memory(s: &Settings, out: &Path) -> Result<Extra, Failure> {
    let mut extra = Extra::new();
    let model = load_model(s, &mut extra)?;
    let sigma = model_sigma(s, &model)?;
    let starts = load_rows(s, "start", &mut extra)?.samples;
    let noise: f64 = s.get("noise")?;
    let starts = if noise > 0.0 {
        let mut rng = stream_rng(s.get("seed")?, Stream::Noise);
        noisy_batch(starts.view(), noise, &mut rng)
    } else {
        starts
    };
    let cfg = flow_config(s, sigma)?;
    let results = memory_flow_batch(&model, starts.view(), &cfg)?;
    write_flows(&results, model.dim(), s.get("grid_cols")?, out)?;
    let converged = results.iter().filter(|r| r.converged).count();
    println!(
        "{converged}/{} flows converged (tol {})",
        results.len(),
        cfg.grad_tol
    );
    extra.push(("converged".into(), converged.to_string()));
    Ok(extra)
}

fn probe(s: &Settings, out: &Path) -> Result<Extra, Failure> {
    let mut extra = Extra::new();
    let model = load_model(s, &mut extra)?;
    let sigma = model.sigma_train().unwrap_or(1.0);
    let cfg = flow_config(s, sigma)?;
    let results = creative_probe(&model, s.get("seeds")?, &cfg, s.get("seed")?)?;
    write_flows(&results, model.dim(), s.get("grid_cols")?, out)?;
    let converged = results.iter().filter(|r| r.converged).count();
    println!(
        "{converged}/{} flows converged (tol {})",
        results.len(),
        cfg.grad_tol
    );
    if s.contains("data") {
        let data = load_rows(s, "data", &mut extra)?;
        let points: Vec<Vec<f64>> = results.iter().map(|r| r.attractor.clone()).collect();
        let dmin = min_distances(&points, data.samples.view());
        let dm = Array2::from_shape_vec((dmin.len(), 1), dmin.clone()).map_err(runtime)?;
        csv(dm.view(), out.join("min_distances.csv"))?;
        let hist = histogram(&dmin, s.get("bins")?);
        println!("distance to nearest training sample:");
        for (lo, hi, c) in &hist {
            println!("  [{lo:8.4}, {hi:8.4})  {c:4}");
        }
        let h = Array2::from_shape_fn((hist.len(), 3), |(i, j)| match j {
            0 => hist[i].0,
            1 => hist[i].1,
            _ => hist[i].2 as f64,
        });
        csv(h.view(), out.join("histogram.csv"))?;
    }
    extra.push(("converged".into(), converged.to_string()));
    Ok(extra)
}

fn chi(s: &Settings, out: &Path) -> Result<Extra, Failure> {
    let mut extra = Extra::new();
    let data = load_rows(s, "input", &mut extra)?;
    let budget = if s.flag("materialize")? {
        usize::MAX
    } else {
        s.get::<usize>("budget_mb")?.saturating_mul(1 << 20)
    };
    let stats = chi_stats_with_budget(data.samples.view(), budget)?;
    println!("{stats}");
    let text = format!(
        "n={}\nd={}\npairs={}\nmin={}\nmedian={}\nmean={}\nmax={}\nsigma_c={}\n",
        data.len(),
        data.dim(),
        stats.n_pairs,
        stats.min,
        stats.median,
        stats.mean,
        stats.max,
        stats.sigma_c
    );
    std::fs::write(out.join("chi_stats.txt"), text).map_err(runtime)?;
    Ok(extra)
}

fn concentrate(s: &Settings, out: &Path) -> Result<Extra, Failure> {
    let r = norm_concentration_probe(
        s.get("d")?,
        s.get("sigma")?,
        s.get("samples")?,
        s.get("seed")?,
    )?;
    println!("{r}");
    std::fs::write(out.join("concentration.txt"), format!("{r}\n")).map_err(runtime)?;
    Ok(Extra::new())
}

fn disintegrate(s: &Settings, out: &Path) -> Result<Extra, Failure> {
    let cfg = DisintegrationConfig {
        d: s.get("d")?,
        d_sharp: s.get("d_sharp")?,
        eps_manifold: s.get("eps_manifold")?,
        sigma: s.get("sigma")?,
        n_samples: s.get("samples")?,
        seed: s.get("seed")?,
    };
    let r = disintegration_experiment(&cfg)?;
    println!("{r}");
    std::fs::write(out.join("disintegration.txt"), format!("{r}\n")).map_err(runtime)?;
    Ok(Extra::new())
}

fn gradcheck(s: &Settings, out: &Path) -> Result<Extra, Failure> {
    let d: usize = s.get("d")?;
    let seed: u64 = s.get("seed")?;
    let step: f64 = s.get("fd_step")?;
    let sigma: f64 = s.get("sigma")?;
    let batch: usize = s.get("batch")?;
    if batch == 0 {
        return Err(Failure::Usage("batch must be positive".into()));
    }
    let mut model = EnergyModel::init(ArchSpec::parse(d, &s.get::<String>("arch")?)?, seed)?;
    // random biases too, so every parameter block is exercised
    let mut rng = stream_rng(seed, Stream::Probe);
    let jitter = noisy_batch(
        Array2::zeros((1, model.params().len())).view(),
        0.05,
        &mut rng,
    );
    for (v, j) in model
        .params_mut()
        .values_mut()
        .iter_mut()
        .zip(jitter.iter())
    {
        *v += j;
    }
    let mut rng = stream_rng(seed, Stream::Data);
    let x = noisy_batch(Array2::zeros((batch, d)).view(), 1.0, &mut rng);
    let y = noisy_batch(x.view(), sigma, &mut rng);
    let input = grad_check_input(&model, x.row(0).as_slice().expect("row"), step)?;
    let loss = grad_check_loss(&model, x.view(), y.view(), sigma, step)?;
    println!("input gradient: {input}");
    println!("loss gradient:  {loss}");
    let text = format!(
        "input_max_rel_err={}\ninput_max_abs_err={}\nloss_max_rel_err={}\nloss_max_abs_err={}\n",
        input.max_rel_err, input.max_abs_err, loss.max_rel_err, loss.max_abs_err
    );
    std::fs::write(out.join("gradcheck.txt"), text).map_err(runtime)?;
    if input.max_rel_err >= 1e-5 || loss.max_rel_err >= 1e-4 {
        return Err(Failure::Runtime(format!(
            "gradient check failed: input {:.3e}, loss {:.3e}",
            input.max_rel_err, loss.max_rel_err
        )));
    }
    Ok(vec![
        ("input_max_rel_err".into(), input.max_rel_err.to_string()),
        ("loss_max_rel_err".into(), loss.max_rel_err.to_string()),
    ])
}
