use paramrel::bfn::{sample_flow_continuous, Theta};
use paramrel::eval::{latent_probe, make_synthetic, DatasetKind};
use paramrel::io::checkpoint::load_checkpoint;
use paramrel::io::config::RunConfig;
use paramrel::model::ParamRelModel;
use paramrel::objective::Sample;
use paramrel::rng;

#[test]
#[ignore]
fn diagnose_latents() {
    let run = std::path::Path::new("/tmp/run_blobs");
    let config = RunConfig::parse(Some(&run.join("resolved.config")), &[]).unwrap();
    let ds = make_synthetic(DatasetKind::BlobsContinuous, 2000, 11).unwrap();
    let model_config = config.model_config(ds.dim(), None).unwrap();
    let store = load_checkpoint(&run.join("checkpoint.prlc")).unwrap();
    let model = ParamRelModel::from_store(model_config, store).unwrap();
    let sched = config.schedule().unwrap();

    for t_probe in [1usize, 3, 5] {
        let mut rng = rng::derive(11, 0xBEE5);
        let mut zs: Vec<Vec<f64>> = Vec::new();
        let mut mus: Vec<Vec<f64>> = Vec::new();
        for i in 0..ds.len() {
            let Sample::Continuous(x) = ds.sample(i) else { panic!() };
            let p = sample_flow_continuous(&x, t_probe, &sched, &mut rng).unwrap();
            mus.push(p.mu.data().to_vec());
            let lg = model.encode(&Theta::Continuous(p), t_probe).unwrap();
            let mut feats = lg.mean.data().to_vec();
            feats.extend(lg.logvar.data().iter().cloned());
            zs.push(feats);
        }
        let labels: Vec<u8> = (0..ds.len()).map(|i| ds.factors[i][2] as u8).collect();

        // mean-only probe
        let z_mean: Vec<Vec<f64>> = zs.iter().map(|v| v[..8].to_vec()).collect();
        let (a_mean, _) = latent_probe(&z_mean, &labels, 5, 3).unwrap();
        // mean+logvar probe
        let (a_both, _) = latent_probe(&zs, &labels, 5, 3).unwrap();
        // quadratic features
        let z_quad: Vec<Vec<f64>> = zs
            .iter()
            .map(|v| {
                let mut q = v[..8].to_vec();
                for i in 0..8 {
                    q.push(v[i] * v[i]);
                }
                q
            })
            .collect();
        let (a_quad, _) = latent_probe(&z_quad, &labels, 5, 3).unwrap();
        // raw mu upper bound
        let (a_mu, _) = latent_probe(&mus, &labels, 5, 3).unwrap();

        // z statistics
        let l = 8;
        let n = zs.len() as f64;
        let mut mean_norm = 0.0;
        for v in &z_mean {
            mean_norm += v.iter().map(|x| x * x).sum::<f64>().sqrt() / n;
        }
        let mut per_coord_sd = vec![0.0; l];
        for c in 0..l {
            let m: f64 = z_mean.iter().map(|v| v[c]).sum::<f64>() / n;
            per_coord_sd[c] =
                (z_mean.iter().map(|v| (v[c] - m) * (v[c] - m)).sum::<f64>() / n).sqrt();
        }
        println!(
            "t={t_probe}: probe mean={a_mean:.3} +logvar={a_both:.3} +quad={a_quad:.3} raw-mu={a_mu:.3}  |z|~{mean_norm:.1} sd={:?}",
            per_coord_sd.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
        );
    }
}
