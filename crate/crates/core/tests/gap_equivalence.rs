use camx::autodiff::backward;
use camx::cam::{compute_weights, CamMethod};
use camx::network::Layer;
use camx::synth::{random_gap_cnn, random_input};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1e-12)
}

#[test]
fn grad_ablation_xgrad_agree_on_gap_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let with_bias = rng.gen_bool(0.5);
        let net = random_gap_cnn(&mut rng, with_bias);
        let l = net.len() - 3;
        let trace = net.forward(&random_input(&mut rng, &net)).unwrap();
        let class = rng.gen_range(0..net.num_classes());
        let grads = backward(&net, &trace, class).unwrap();
        let w = |m| compute_weights(m, &net, &trace, Some(&grads), l, class).unwrap();
        let (grad, ablation, xgrad, cam) = (
            w(CamMethod::GradCam),
            w(CamMethod::AblationCam),
            w(CamMethod::XgradCam),
            w(CamMethod::CamGap),
        );
        let f = trace.output(l);
        let z = (f.shape()[1] * f.shape()[2]) as f64;
        let Layer::Dense(fc) = net.layer(net.len() - 1) else {
            panic!("dense head")
        };
        for k in 0..grad.len() {
            let row = fc.row(class)[k] / z;
            assert_eq!(cam[k], fc.row(class)[k]);
            assert!(close(grad[k], row), "grad {k}: {} vs {row}", grad[k]);
            // a channel with no mass has its ratio weights defined as 0
            if f.channel(k).iter().all(|&v| v == 0.0) {
                assert_eq!((ablation[k], xgrad[k]), (0.0, 0.0));
                continue;
            }
            assert!(close(ablation[k], row), "ablation {k}: {} vs {row}", ablation[k]);
            assert!(close(xgrad[k], row), "xgrad {k}: {} vs {row}", xgrad[k]);
        }
    }
}
