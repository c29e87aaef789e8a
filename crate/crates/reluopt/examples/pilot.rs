use reluopt::benchfn::{generate, BenchmarkFunction, BenchmarkId};
use reluopt::trainer::{train, TrainConfig};

fn main() {
    let f = BenchmarkFunction::new(BenchmarkId::Peaks);
    for (n, epochs, width, layers, bs, lr) in [
        (20_000usize, 300usize, 25usize, 2usize, 256usize, 1e-3),
        (20_000, 300, 25, 3, 256, 1e-3),
        (20_000, 300, 50, 2, 256, 1e-3),
        (40_000, 300, 25, 2, 256, 1e-3),
        (20_000, 300, 25, 2, 128, 5e-4),
    ] {
        let data = generate(&f, n, 2).unwrap();
        let cfg = TrainConfig { hidden_layers: layers, width, epochs, batch_size: bs, learning_rate: lr, seed: 7, ..TrainConfig::default() };
        let t0 = std::time::Instant::now();
        let (net, report) = train(&data, &cfg).unwrap();
        let mut rmse = 0.0; let mut cnt = 0.0; let mut maxe = 0.0f64;
        for i in 0..60 { for j in 0..60 {
            let x = -2.0 + 4.0*i as f64/59.0; let y = -2.0 + 4.0*j as f64/59.0;
            let p = net.forward(&[x,y]).unwrap()[0];
            let t = f.evaluate(x,y);
            rmse += (p-t)*(p-t); cnt += 1.0; maxe = maxe.max((p-t).abs());
        }}
        rmse = (rmse/cnt).sqrt();
        println!("n={n} e={epochs} w={width} d={layers} bs={bs} lr={lr}: mape={:.4} rmse={rmse:.4} maxerr={maxe:.3} time={:.1}s", report.test_mape, t0.elapsed().as_secs_f64());
    }
}
