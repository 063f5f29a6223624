use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::tier::Multiplier;
use crate::data::{ImageBatch, LatentBatch, IMAGE_SIDE, LATENT_DIM};
use crate::error::{Error, Result};
use crate::nn::{
    self, BatchNorm, BatchNormCache, ConvCache, ConvTranspose2d, Dense, Feature, Initializer,
    ParamSet,
};
use crate::scalar::{lit, Scalar};
use crate::seed;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const GEN_KERNEL: usize = 5;
/// Spatial size of the projected seed map.
pub const SEED_SIDE: usize = 7;

/// Width configuration of the generator. `width = 1` is the full-size
/// network (dense 100→12544, transposed convs 128/64/32 channels).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub width: Multiplier,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: Multiplier::ONE,
        }
    }
}

impl GeneratorConfig {
    pub fn seed_channels(&self) -> usize {
        self.width.scale(256)
    }

    /// Output channels of the three hidden transposed-conv blocks.
    pub fn block_channels(&self) -> [usize; 3] {
        [
            self.width.scale(128),
            self.width.scale(64),
            self.width.scale(32),
        ]
    }

    pub const BLOCK_STRIDES: [usize; 3] = [1, 2, 2];
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpBlock<T> {
    pub tconv: ConvTranspose2d<T>,
    pub bn: BatchNorm<T>,
}

/// Latent → image network: dense projection, three transposed-conv blocks
/// with batch normalization and LeakyReLU, and a tanh output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<T> {
    pub config: GeneratorConfig,
    pub init_seed: u64,
    pub project: Dense<T>,
    pub project_bn: BatchNorm<T>,
    pub blocks: Vec<UpBlock<T>>,
    pub output: ConvTranspose2d<T>,
}

pub struct GeneratorCache<T> {
    z: Array2<T>,
    project_bn: BatchNormCache<T>,
    project_pre: Array2<T>,
    blocks: Vec<BlockCache<T>>,
    output: ConvCache<T>,
    image: Array2<T>,
}

struct BlockCache<T> {
    tconv: ConvCache<T>,
    in_side: usize,
    bn: BatchNormCache<T>,
    pre: Array2<T>,
}

impl<T: Scalar> GeneratorParams<T> {
    pub fn init(seed: u64, config: GeneratorConfig) -> Self {
        let mut init = Initializer::new(seed::derive_seed(seed, "generator-init", 0));
        let c0 = config.seed_channels();
        let feats = SEED_SIDE * SEED_SIDE * c0;
        let project = Dense::init(&mut init, LATENT_DIM, feats, false);
        let mut cin = c0;
        let blocks = config
            .block_channels()
            .iter()
            .zip(GeneratorConfig::BLOCK_STRIDES)
            .map(|(&cout, stride)| {
                let tconv = ConvTranspose2d::init(&mut init, cin, cout, GEN_KERNEL, stride, false);
                cin = cout;
                UpBlock {
                    tconv,
                    bn: BatchNorm::new(cout),
                }
            })
            .collect();
        let output = ConvTranspose2d::init(&mut init, cin, 1, GEN_KERNEL, 1, true);
        GeneratorParams {
            config,
            init_seed: seed,
            project,
            project_bn: BatchNorm::new(feats),
            blocks,
            output,
        }
    }

    pub fn zeros_like(&self) -> Self {
        GeneratorParams {
            config: self.config,
            init_seed: self.init_seed,
            project: self.project.zeros_like(),
            project_bn: self.project_bn.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| UpBlock {
                    tconv: b.tconv.zeros_like(),
                    bn: b.bn.zeros_like(),
                })
                .collect(),
            output: self.output.zeros_like(),
        }
    }

    /// Forward pass retaining what the backward pass needs. In train mode the
    /// normalization layers use batch statistics.
    pub fn forward_cached(
        &self,
        latents: &Array2<T>,
        train: bool,
    ) -> Result<(Feature<T>, GeneratorCache<T>)> {
        if latents.ncols() != LATENT_DIM {
            return Err(Error::shape(format!(
                "latent dimension {} != {LATENT_DIM}",
                latents.ncols()
            )));
        }
        let n = latents.nrows();
        if n == 0 {
            return Err(Error::shape("empty latent batch"));
        }
        let slope: T = lit(LEAKY_SLOPE);
        let h = self.project.forward(latents.view());
        let (h, project_bn) = self.project_bn.forward(&h, train);
        let act = nn::leaky_relu(&h, slope);
        let mut x = Feature::unflatten(act, SEED_SIDE, SEED_SIDE, self.config.seed_channels());
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let in_side = x.h;
            let (y, tconv) = b.tconv.forward(&x);
            let (pre, bn) = b.bn.forward(&y.data, train);
            let act = nn::leaky_relu(&pre, slope);
            blocks.push(BlockCache {
                tconv,
                in_side,
                bn,
                pre,
            });
            x = Feature::new(act, y.n, y.h, y.w);
        }
        let (y, output) = self.output.forward(&x);
        let image = nn::tanh(&y.data);
        let out = Feature::new(image.clone(), n, y.h, y.w);
        debug_assert_eq!((out.h, out.w), (IMAGE_SIDE, IMAGE_SIDE));
        Ok((
            out,
            GeneratorCache {
                z: latents.clone(),
                project_bn,
                project_pre: h,
                blocks,
                output,
                image,
            },
        ))
    }

    /// Backpropagates `d_image` (`[n*784, 1]`) into `grads`.
    pub fn backward(
        &self,
        cache: &GeneratorCache<T>,
        d_image: &Array2<T>,
        grads: &mut GeneratorParams<T>,
    ) {
        let slope: T = lit(LEAKY_SLOPE);
        let n = cache.z.nrows();
        let dy = nn::tanh_backward(&cache.image, d_image);
        let last_side = IMAGE_SIDE;
        let mut dx = self.output.backward(
            &cache.output,
            last_side,
            last_side,
            &dy,
            Some(&mut grads.output),
        );
        for ((b, bc), gb) in self
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(grads.blocks.iter_mut())
            .rev()
        {
            let d_pre = nn::leaky_relu_backward(&bc.pre, &dx.data, slope);
            let d_conv = b.bn.backward(&bc.bn, &d_pre, Some(&mut gb.bn));
            dx = b.tconv.backward(
                &bc.tconv,
                bc.in_side,
                bc.in_side,
                &d_conv,
                Some(&mut gb.tconv),
            );
        }
        debug_assert_eq!(dx.n, n);
        let d_act = dx.flatten();
        let d_pre = nn::leaky_relu_backward(&cache.project_pre, &d_act, slope);
        let d_dense =
            self.project_bn
                .backward(&cache.project_bn, &d_pre, Some(&mut grads.project_bn));
        self.project
            .backward(cache.z.view(), d_dense.view(), Some(&mut grads.project));
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn commit_batch_stats(&mut self, cache: &GeneratorCache<T>) {
        self.project_bn.commit(&cache.project_bn);
        for (b, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.bn.commit(&bc.bn);
        }
    }

    pub fn generate(&self, latents: &LatentBatch<T>, train: bool) -> Result<ImageBatch<T>> {
        let (out, _) = self.forward_cached(&latents.vectors, train)?;
        Ok(ImageBatch::from_feature_unchecked(out))
    }
}

impl<T: Scalar> ParamSet<T> for GeneratorParams<T> {
    fn params(&self) -> Vec<&[T]> {
        let mut v = vec![
            nn::slice(&self.project.weight),
            nn::slice(&self.project_bn.gamma),
            nn::slice(&self.project_bn.beta),
        ];
        for b in &self.blocks {
            v.extend([
                nn::slice(&b.tconv.weight),
                nn::slice(&b.bn.gamma),
                nn::slice(&b.bn.beta),
            ]);
        }
        v.push(nn::slice(&self.output.weight));
        v.push(nn::slice(self.output.bias.as_ref().expect("output bias")));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = vec![
            nn::slice_mut(&mut self.project.weight),
            nn::slice_mut(&mut self.project_bn.gamma),
            nn::slice_mut(&mut self.project_bn.beta),
        ];
        for b in &mut self.blocks {
            v.push(nn::slice_mut(&mut b.tconv.weight));
            v.push(nn::slice_mut(&mut b.bn.gamma));
            v.push(nn::slice_mut(&mut b.bn.beta));
        }
        v.push(nn::slice_mut(&mut self.output.weight));
        v.push(nn::slice_mut(
            self.output.bias.as_mut().expect("output bias"),
        ));
        v
    }

    fn buffers(&self) -> Vec<&[T]> {
        let mut v = vec![
            nn::slice(&self.project_bn.running_mean),
            nn::slice(&self.project_bn.running_var),
        ];
        for b in &self.blocks {
            v.push(nn::slice(&b.bn.running_mean));
            v.push(nn::slice(&b.bn.running_var));
        }
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = vec![
            nn::slice_mut(&mut self.project_bn.running_mean),
            nn::slice_mut(&mut self.project_bn.running_var),
        ];
        for b in &mut self.blocks {
            v.push(nn::slice_mut(&mut b.bn.running_mean));
            v.push(nn::slice_mut(&mut b.bn.running_var));
        }
        v
    }
}

/// Generates images from latents; eval mode uses running normalization statistics.
pub fn generator_forward<T: Scalar>(
    params: &GeneratorParams<T>,
    latents: &LatentBatch<T>,
    train_mode: bool,
) -> Result<ImageBatch<T>> {
    params.generate(latents, train_mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_latents;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            width: Multiplier::new(1, 16).unwrap(),
        }
    }

    #[test]
    fn full_size_architecture() {
        let g = GeneratorParams::<f32>::init(1, GeneratorConfig::default());
        assert_eq!(g.project.weight.shape(), &[100, 12544]);
        let chans: Vec<_> = g.blocks.iter().map(|b| b.tconv.out_channels()).collect();
        assert_eq!(chans, vec![128, 64, 32]);
        assert!(g.blocks.iter().all(|b| b.tconv.kernel == 5));
        let strides: Vec<_> = g
            .blocks
            .iter()
            .map(|b| b.tconv.stride)
            .chain([g.output.stride])
            .collect();
        assert_eq!(strides, vec![1, 2, 2, 1]);
        assert_eq!(g.output.out_channels(), 1);
    }

    #[test]
    fn output_shape_and_range() {
        let g = GeneratorParams::<f32>::init(3, small());
        for batch in [1, 3, 64] {
            let z = sample_latents(9, batch).unwrap();
            for train in [false, true] {
                let img = generator_forward(&g, &z, train).unwrap();
                assert_eq!(img.pixels().shape(), &[batch, 28, 28, 1]);
                assert!(img.pixels().iter().all(|v| *v > -1.0 && *v < 1.0));
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let g = GeneratorParams::<f32>::init(3, small());
        let z = sample_latents(4, 8).unwrap();
        assert_eq!(
            generator_forward(&g, &z, false).unwrap(),
            generator_forward(&g, &z, false).unwrap()
        );
    }

    #[test]
    fn rejects_wrong_latent_dimension() {
        let g = GeneratorParams::<f32>::init(3, small());
        let z = LatentBatch {
            vectors: Array2::zeros((2, 64)),
            seed: 0,
        };
        assert!(matches!(
            generator_forward(&g, &z, false),
            Err(Error::Shape(_))
        ));
    }
}
