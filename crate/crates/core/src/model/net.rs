//! Two-stream network: content encoder and generator, motion encoder and
//! generator with per-scale kernel and mask branches, and a single-step
//! ConvLSTM on the motion latent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::fusion::{
    adaptive_conv, adaptive_conv_backward, mask_activation, mask_activation_backward, mask_blend, mask_blend_backward,
    ContentPyramid, FusionConfig, KernelField, MaskField, SeparableKernelField,
};
use crate::losses::{kl_grad, GaussianParams};
use crate::nn::{
    convlstm_step, convlstm_step_backward, xavier_uniform, ConvLstmCache, ConvLstmParams, ConvLstmSpec, ConvSpec,
    Layer, ParamSet, Stack, Trace,
};
use crate::rng::{randn, SeededRng};
use crate::tensor::{Real, Tensor};

use super::config::ModelConfig;

/// Parameter group. Training alternates between the two and only the active
/// group is updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// Content encoder and generator.
    Content,
    /// Motion encoder, motion generator and the LSTM cell.
    Motion,
}

/// How the motion pathway enters the content generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Content pathway only; the motion stream is not evaluated.
    Off,
    On,
    /// Evaluate the motion stream but force every mask to zero.
    ZeroMask,
}

const LSTM_WX: &str = "lstm.wx";
const LSTM_WH: &str = "lstm.wh";
const LSTM_B: &str = "lstm.b";

#[derive(Clone, Debug, PartialEq)]
struct Nets {
    ec: Stack,
    em: Stack,
    gc_fc: Stack,
    gc_stage: Vec<Stack>,
    gc_head: Stack,
    gm_fc: Stack,
    gm_up: Vec<Stack>,
    gm_trunk: Vec<Stack>,
    gm_wv: Vec<Stack>,
    gm_wh: Vec<Stack>,
    gm_mask: Vec<Stack>,
    lstm: ConvLstmSpec,
}

fn conv3(name: String, cin: usize, cout: usize) -> Layer {
    Layer::conv(name, ConvSpec::new(cin, cout, 3, 1, 1))
}

impl Nets {
    fn new(c: &ModelConfig) -> Nets {
        let (ngf, k, img, l) = (c.ngf, c.classes, c.channels, c.image_size);
        let flat = 2 * ngf * (l / 8) * (l / 8);
        let ec = Stack::new(vec![
            Layer::conv("ec.c1", ConvSpec::new(img + k, ngf, 3, 2, 1)),
            Layer::Relu,
            Layer::conv("ec.c2", ConvSpec::new(ngf, 2 * ngf, 3, 2, 1)),
            Layer::Relu,
            Layer::conv("ec.c3", ConvSpec::new(2 * ngf, 2 * ngf, 3, 2, 1)),
            Layer::Relu,
            Layer::Reshape(vec![flat]),
            Layer::linear("ec.fc", flat, 2 * c.content_dim),
        ]);
        let em = Stack::new(vec![
            Layer::conv("em.c1", ConvSpec::new(img + k, ngf, 5, 1, 2)),
            Layer::Relu,
            Layer::MaxPool,
            conv3("em.c2".into(), ngf, 2 * ngf),
            Layer::Relu,
            Layer::MaxPool,
            conv3("em.c3".into(), 2 * ngf, 2 * ngf),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Reshape(vec![flat]),
            Layer::linear("em.fc", flat, 2 * c.motion_dim),
        ]);
        let (d0, g) = (c.width(0), c.seed_extent());
        let seed = |name: &str, inputs: usize| {
            Stack::new(vec![
                Layer::linear(name, inputs, d0 * g * g),
                Layer::Relu,
                Layer::Reshape(vec![d0, g, g]),
            ])
        };
        let up = |name: String, cin: usize, cout: usize| Layer::deconv(name, ConvSpec::new(cin, cout, 4, 2, 1));
        let mut nets = Nets {
            ec,
            em,
            gc_fc: seed("gc.fc", c.content_dim + k),
            gc_stage: Vec::new(),
            gc_head: Stack::new(vec![conv3("gc.head".into(), c.width(c.scales - 1), img), Layer::Tanh]),
            gm_fc: seed("gm.fc", c.content_dim + c.motion_dim + k),
            gm_up: Vec::new(),
            gm_trunk: Vec::new(),
            gm_wv: Vec::new(),
            gm_wh: Vec::new(),
            gm_mask: Vec::new(),
            lstm: ConvLstmSpec {
                input_channels: c.motion_dim,
                hidden_channels: c.motion_dim,
                kernel: 1,
            },
        };
        let mut prev = d0;
        for s in 0..c.scales {
            let d = c.width(s);
            nets.gc_stage.push(Stack::new(vec![
                up(format!("gc.up{s}"), prev, d),
                Layer::Relu,
                conv3(format!("gc.cv{s}"), d, d),
                Layer::Relu,
            ]));
            nets.gm_up
                .push(Stack::new(vec![up(format!("gm.up{s}"), prev, d), Layer::Relu]));
            nets.gm_trunk
                .push(Stack::new(vec![conv3(format!("gm.tr{s}"), d, d), Layer::Relu]));
            nets.gm_wv
                .push(Stack::new(vec![conv3(format!("gm.wv{s}"), d, c.kernel_size)]));
            nets.gm_wh
                .push(Stack::new(vec![conv3(format!("gm.wh{s}"), d, c.kernel_size)]));
            nets.gm_mask.push(Stack::new(vec![conv3(format!("gm.mask{s}"), d, 1)]));
            prev = d;
        }
        nets
    }

    fn content_stacks(&self) -> impl Iterator<Item = &Stack> {
        std::iter::once(&self.ec)
            .chain(std::iter::once(&self.gc_fc))
            .chain(&self.gc_stage)
            .chain(std::iter::once(&self.gc_head))
    }

    fn motion_stacks(&self) -> impl Iterator<Item = &Stack> {
        std::iter::once(&self.em)
            .chain(std::iter::once(&self.gm_fc))
            .chain(&self.gm_up)
            .chain(&self.gm_trunk)
            .chain(&self.gm_wv)
            .chain(&self.gm_wh)
            .chain(&self.gm_mask)
    }
}

/// Parameters of the full model, split into the two training groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T> {
    config: ModelConfig,
    nets: Nets,
    content: ParamSet<T>,
    motion: ParamSet<T>,
}

impl<T: Real> ModelBundle<T> {
    /// Xavier weights and zero biases, except the kernel branches whose bias
    /// puts 1 on the centre tap so fusion starts close to the identity.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let nets = Nets::new(&config);
        let mut rng = SeededRng::new(seed);
        let mut content = ParamSet::new();
        for s in nets.content_stacks() {
            s.init_params(&mut content, &mut rng)?;
        }
        let mut motion = ParamSet::new();
        for s in nets.motion_stacks() {
            s.init_params(&mut motion, &mut rng)?;
        }
        let m = config.motion_dim;
        let ws = nets.lstm.input_weight_shape();
        motion.insert(LSTM_WX, xavier_uniform(&mut rng, &ws, m, 4 * m)?)?;
        let hs = nets.lstm.hidden_weight_shape();
        motion.insert(LSTM_WH, xavier_uniform(&mut rng, &hs, m, 4 * m)?)?;
        motion.insert(LSTM_B, Tensor::zeros(&[nets.lstm.bias_len()])?)?;
        let r = config.kernel_size / 2;
        for s in 0..config.scales {
            for branch in ["wv", "wh"] {
                motion.value_mut(&format!("gm.{branch}{s}.b"))?.data_mut()[r] = T::one();
            }
        }
        Ok(ModelBundle {
            config,
            nets,
            content,
            motion,
        })
    }

    /// Rebuild from stored parameter groups. Names and shapes must match a
    /// freshly initialised model of the same configuration.
    pub fn from_params(config: ModelConfig, content: ParamSet<T>, motion: ParamSet<T>) -> Result<Self> {
        let template = Self::new(config, 0)?;
        for (have, want, group) in [
            (&content, &template.content, "content"),
            (&motion, &template.motion, "motion"),
        ] {
            let a: Vec<_> = have.iter().map(|(n, p)| (n, p.value.shape())).collect();
            let b: Vec<_> = want.iter().map(|(n, p)| (n, p.value.shape())).collect();
            if a != b {
                return Err(Error::invalid(format!(
                    "{group} parameters do not match the configuration"
                )));
            }
            if !have.all_finite() {
                return Err(Error::invalid(format!("non-finite {group} parameter")));
            }
        }
        Ok(ModelBundle {
            config: template.config,
            nets: template.nets,
            content,
            motion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fusion_config(&self) -> Result<FusionConfig> {
        self.config.fusion()
    }

    pub fn params(&self, g: Group) -> &ParamSet<T> {
        match g {
            Group::Content => &self.content,
            Group::Motion => &self.motion,
        }
    }

    pub fn params_mut(&mut self, g: Group) -> &mut ParamSet<T> {
        match g {
            Group::Content => &mut self.content,
            Group::Motion => &mut self.motion,
        }
    }

    pub fn into_params(self) -> (ParamSet<T>, ParamSet<T>) {
        (self.content, self.motion)
    }

    pub fn num_params(&self) -> usize {
        self.content.num_values() + self.motion.num_values()
    }

    pub fn all_finite(&self) -> bool {
        self.content.all_finite() && self.motion.all_finite()
    }

    pub fn zero_grads(&mut self) {
        self.content.zero_grads();
        self.motion.zero_grads();
    }

    pub fn cast<U: Real>(&self) -> ModelBundle<U> {
        ModelBundle {
            config: self.config.clone(),
            nets: self.nets.clone(),
            content: self.content.cast(),
            motion: self.motion.cast(),
        }
    }

    fn check_frames(&self, what: &str, x: &Tensor<T>, labels: &[usize]) -> Result<()> {
        let c = &self.config;
        let want = [labels.len(), c.channels, c.image_size, c.image_size];
        if x.shape() != want {
            return Err(Error::invalid(format!(
                "{what} has shape {:?}, expected {want:?}",
                x.shape()
            )));
        }
        if let Some(&k) = labels.iter().find(|&&k| k >= c.classes) {
            return Err(Error::OutOfRange {
                op: "class label",
                index: k,
                limit: c.classes,
            });
        }
        Ok(())
    }

    fn one_hot(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let k = self.config.classes;
        let mut t = Tensor::zeros(&[labels.len(), k])?;
        for (b, &l) in labels.iter().enumerate() {
            t.data_mut()[b * k + l] = T::one();
        }
        Ok(t)
    }

    fn one_hot_maps(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let (k, l) = (self.config.classes, self.config.image_size);
        let mut t = Tensor::zeros(&[labels.len(), k, l, l])?;
        for (b, &c) in labels.iter().enumerate() {
            let start = (b * k + c) * l * l;
            t.data_mut()[start..start + l * l].fill(T::one());
        }
        Ok(t)
    }

    fn encode(
        &self,
        stack: &Stack,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        labels: &[usize],
        dim: usize,
    ) -> Result<Encoded<T>> {
        let input = Tensor::concat_axis1(&[x, &self.one_hot_maps(labels)?])?;
        let (out, trace) = stack.forward(params, input)?;
        let mut parts = out.split_axis1(&[dim, dim])?.into_iter();
        let (mean, log_var) = (parts.next().unwrap(), parts.next().unwrap());
        Ok(Encoded {
            q: GaussianParams::new(mean, log_var)?,
            trace,
        })
    }

    /// Posterior over the content latent for frames `(B, C, H, W)`.
    pub fn encode_content(&self, x: &Tensor<T>, labels: &[usize]) -> Result<GaussianParams<T>> {
        self.check_frames("frame", x, labels)?;
        Ok(self
            .encode(&self.nets.ec, &self.content, x, labels, self.config.content_dim)
            .at_stage("content encoder")?
            .q)
    }

    /// Posterior over the motion latent for difference maps.
    pub fn encode_motion(&self, dx: &Tensor<T>, labels: &[usize]) -> Result<GaussianParams<T>> {
        self.check_frames("difference map", dx, labels)?;
        Ok(self
            .encode(&self.nets.em, &self.motion, dx, labels, self.config.motion_dim)
            .at_stage("motion encoder")?
            .q)
    }

    fn lstm_params(&self) -> Result<ConvLstmParams<'_, T>> {
        Ok(ConvLstmParams {
            w_input: self.motion.value(LSTM_WX)?,
            w_hidden: self.motion.value(LSTM_WH)?,
            bias: self.motion.value(LSTM_B)?,
        })
    }

    /// Zero LSTM state for a batch.
    pub fn lstm_state(&self, batch: usize) -> Result<LstmState<T>> {
        let z = Tensor::zeros(&[batch, self.config.motion_dim, 1, 1])?;
        Ok(LstmState { h: z.clone(), c: z })
    }

    /// Fold a motion latent through the LSTM cell. Returns the embedding
    /// `(B, M)`, the new state and the cache for the backward pass.
    fn lstm_forward(
        &self,
        z_m: &Tensor<T>,
        state: &LstmState<T>,
    ) -> Result<(Tensor<T>, LstmState<T>, Option<ConvLstmCache<T>>)> {
        if !self.config.use_lstm {
            return Ok((z_m.clone(), state.clone(), None));
        }
        let [b, m] = [z_m.shape()[0], z_m.shape()[1]];
        let x = z_m.clone().reshape(&[b, m, 1, 1])?;
        let (h, c, cache) = convlstm_step(&self.nets.lstm, &x, &state.h, &state.c, &self.lstm_params()?)?;
        let e = h.clone().reshape(&[b, m])?;
        Ok((e, LstmState { h, c }, Some(cache)))
    }

    fn decode(
        &self,
        z_c: &Tensor<T>,
        e_m: Option<&Tensor<T>>,
        labels: &[usize],
        mode: FusionMode,
    ) -> Result<Decoded<T>> {
        let c = &self.config;
        let oh = self.one_hot(labels)?;
        let batch = labels.len();
        let mut motion = None;
        if mode != FusionMode::Off {
            let e_m = e_m.ok_or_else(|| Error::invalid("fusion requires a motion embedding"))?;
            let input = Tensor::concat_axis1(&[z_c, e_m, &oh])?;
            motion = Some(self.motion_decode(input, batch, mode).at_stage("motion generator")?);
        }
        let (mut h, gc_fc) = self
            .nets
            .gc_fc
            .forward(&self.content, Tensor::concat_axis1(&[z_c, &oh])?)
            .at_stage("content generator")?;
        let mut content = Vec::with_capacity(c.scales);
        let mut refined = Vec::with_capacity(c.scales);
        let mut tilde = Vec::with_capacity(c.scales);
        let mut gc_stage = Vec::with_capacity(c.scales);
        for s in 0..c.scales {
            let (hs, tr) = self.nets.gc_stage[s]
                .forward(&self.content, h)
                .at_stage("content generator")
                .at_scale(s)?;
            gc_stage.push(tr);
            let next = match &motion {
                Some(m) => {
                    let mut outs = Vec::with_capacity(batch);
                    let mut tildes = Vec::with_capacity(batch);
                    for b in 0..batch {
                        let hb = hs.batch_item(b)?;
                        let t = adaptive_conv(&hb, &m.kernels[s][b]).at_scale(s)?;
                        outs.push(mask_blend(&hb, &t, &m.masks[s][b]).at_scale(s)?);
                        tildes.push(t);
                    }
                    tilde.push(Tensor::stack(&tildes)?);
                    Tensor::stack(&outs)?
                }
                None => hs.clone(),
            };
            content.push(hs);
            refined.push(next.clone());
            h = next;
        }
        let (x_hat, gc_head) = self
            .nets
            .gc_head
            .forward(&self.content, h)
            .at_stage("content generator")?;
        Ok(Decoded {
            x_hat,
            content,
            refined,
            tilde,
            motion,
            gc_fc,
            gc_stage,
            gc_head,
        })
    }

    fn motion_decode(&self, input: Tensor<T>, batch: usize, mode: FusionMode) -> Result<MotionDecoded<T>> {
        let c = &self.config;
        let (mut h, gm_fc) = self.nets.gm_fc.forward(&self.motion, input)?;
        let mut out = MotionDecoded {
            kernels: Vec::new(),
            masks: Vec::new(),
            gm_fc,
            gm_up: Vec::new(),
            gm_trunk: Vec::new(),
            gm_wv: Vec::new(),
            gm_wh: Vec::new(),
            gm_mask: Vec::new(),
        };
        for s in 0..c.scales {
            let l = c.resolution(s);
            let (hu, tr) = self.nets.gm_up[s].forward(&self.motion, h).at_scale(s)?;
            out.gm_up.push(tr);
            let (t, tr) = self.nets.gm_trunk[s].forward(&self.motion, hu.clone()).at_scale(s)?;
            out.gm_trunk.push(tr);
            let (wv, tr) = self.nets.gm_wv[s].forward(&self.motion, t.clone()).at_scale(s)?;
            out.gm_wv.push(tr);
            let (wh, tr) = self.nets.gm_wh[s].forward(&self.motion, t.clone()).at_scale(s)?;
            out.gm_wh.push(tr);
            let (raw, tr) = self.nets.gm_mask[s].forward(&self.motion, t).at_scale(s)?;
            out.gm_mask.push(tr);
            let mut ks = Vec::with_capacity(batch);
            let mut ms = Vec::with_capacity(batch);
            for b in 0..batch {
                ks.push(KernelField::from(SeparableKernelField::new(
                    wv.batch_item(b)?,
                    wh.batch_item(b)?,
                )?));
                ms.push(match mode {
                    FusionMode::ZeroMask => MaskField::new(Tensor::zeros(&[1, 1, l, l])?)?,
                    _ => mask_activation(&raw.batch_item(b)?).at_scale(s)?,
                });
            }
            out.kernels.push(ks);
            out.masks.push(ms);
            h = hu;
        }
        Ok(out)
    }

    /// Predict the next frame from the current frame `x` and its difference
    /// map `dx` (both `(B, C, H, W)`). With `noise = None` both latents are
    /// their posterior means. With [`FusionMode::Off`] the output is the
    /// content pathway's reconstruction of `x` and `dx` may be `None`.
    pub fn forward_next_frame(
        &self,
        x: &Tensor<T>,
        dx: Option<&Tensor<T>>,
        labels: &[usize],
        mode: FusionMode,
        mut noise: Option<&mut SeededRng>,
    ) -> Result<NextFrame<T>> {
        self.check_frames("frame", x, labels)?;
        let (b, c, m) = (labels.len(), self.config.content_dim, self.config.motion_dim);
        let enc_c = self
            .encode(&self.nets.ec, &self.content, x, labels, c)
            .at_stage("content encoder")?;
        let eta_c = match noise.as_deref_mut() {
            Some(rng) => randn(rng, &[b, c])?,
            None => Tensor::zeros(&[b, c])?,
        };
        let z_c = enc_c.q.sample(&eta_c)?;
        let mut motion = None;
        if mode != FusionMode::Off {
            let dx = dx.ok_or_else(|| Error::invalid("fusion requires a difference map"))?;
            self.check_frames("difference map", dx, labels)?;
            let enc_m = self
                .encode(&self.nets.em, &self.motion, dx, labels, m)
                .at_stage("motion encoder")?;
            let eta_m = match noise {
                Some(rng) => randn(rng, &[b, m])?,
                None => Tensor::zeros(&[b, m])?,
            };
            let z_m = enc_m.q.sample(&eta_m)?;
            let (e_m, _, lstm) = self.lstm_forward(&z_m, &self.lstm_state(b)?).at_stage("lstm")?;
            motion = Some(MotionLatent {
                enc: enc_m,
                eta: eta_m,
                e_m,
                lstm,
            });
        }
        let dec = self.decode(&z_c, motion.as_ref().map(|m| &m.e_m), labels, mode)?;
        Ok(NextFrame {
            mode,
            enc_c,
            eta_c,
            motion,
            dec,
        })
    }

    /// Backpropagate loss gradients through a forward pass. Parameter
    /// gradients are added only for the groups listed in `groups`; frozen
    /// stacks still pass gradients through.
    pub fn backward(&mut self, fwd: &NextFrame<T>, seeds: &Seeds<T>, groups: &[Group]) -> Result<()> {
        let acc_c = groups.contains(&Group::Content);
        let acc_m = groups.contains(&Group::Motion);
        let cfg = self.config.clone();
        let nets = self.nets.clone();
        let dec = &fwd.dec;
        let batch = fwd.dec.x_hat.shape()[0];
        if seeds.refined.len() > cfg.scales {
            return Err(Error::invalid("more refined-map seeds than scales"));
        }
        let g_x = match &seeds.x_hat {
            Some(g) => g.clone(),
            None => dec.x_hat.zeros_like(),
        };
        let mut g = nets.gc_head.backward(&mut self.content, &dec.gc_head, g_x, acc_c)?;
        let mut g_wv = vec![None; cfg.scales];
        let mut g_wh = vec![None; cfg.scales];
        let mut g_raw = vec![None; cfg.scales];
        for s in (0..cfg.scales).rev() {
            if let Some(Some(seed)) = seeds.refined.get(s) {
                g.add_assign(seed)?;
            }
            let g_h = match &dec.motion {
                Some(m) => {
                    let (mut gh, mut gv, mut gw, mut gr) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                    for b in 0..batch {
                        let hb = dec.content[s].batch_item(b)?;
                        let tb = dec.tilde[s].batch_item(b)?;
                        let mask = &m.masks[s][b];
                        let blend = mask_blend_backward(&hb, &tb, mask, &g.batch_item(b)?)?;
                        let conv = adaptive_conv_backward(&hb, &m.kernels[s][b], &blend.intermediate)?;
                        gh.push(blend.content.add(&conv.content)?);
                        let KernelField::Separable(k) = conv.kernels else {
                            return Err(Error::invalid("expected separable kernel gradients"));
                        };
                        let (v, w) = k.into_parts();
                        gv.push(v);
                        gw.push(w);
                        let l = cfg.resolution(s);
                        gr.push(match fwd.mode {
                            FusionMode::ZeroMask => Tensor::zeros(&[1, 1, l, l])?,
                            _ => mask_activation_backward(mask, &blend.mask)?.reshape(&[1, 1, l, l])?,
                        });
                    }
                    g_wv[s] = Some(Tensor::stack(&gv)?.reshape(&[
                        batch,
                        cfg.kernel_size,
                        cfg.resolution(s),
                        cfg.resolution(s),
                    ])?);
                    g_wh[s] = Some(Tensor::stack(&gw)?.reshape(&[
                        batch,
                        cfg.kernel_size,
                        cfg.resolution(s),
                        cfg.resolution(s),
                    ])?);
                    g_raw[s] = Some(Tensor::stack(&gr)?);
                    Tensor::stack(&gh)?
                }
                None => g,
            };
            g = nets.gc_stage[s].backward(&mut self.content, &dec.gc_stage[s], g_h, acc_c)?;
        }
        let g_in = nets.gc_fc.backward(&mut self.content, &dec.gc_fc, g, acc_c)?;
        let mut g_zc = g_in.split_axis1(&[cfg.content_dim, cfg.classes])?.swap_remove(0);

        if let (Some(m), Some(lat)) = (&dec.motion, &fwd.motion) {
            let mut carry: Option<Tensor<T>> = None;
            for s in (0..cfg.scales).rev() {
                let take = |v: &mut Vec<Option<Tensor<T>>>| {
                    v[s].take().ok_or_else(|| Error::invalid("missing branch gradient"))
                };
                let mut g_t = nets.gm_wv[s].backward(&mut self.motion, &m.gm_wv[s], take(&mut g_wv)?, acc_m)?;
                g_t.add_assign(&nets.gm_wh[s].backward(&mut self.motion, &m.gm_wh[s], take(&mut g_wh)?, acc_m)?)?;
                g_t.add_assign(&nets.gm_mask[s].backward(
                    &mut self.motion,
                    &m.gm_mask[s],
                    take(&mut g_raw)?,
                    acc_m,
                )?)?;
                let mut g_hu = nets.gm_trunk[s].backward(&mut self.motion, &m.gm_trunk[s], g_t, acc_m)?;
                if let Some(cg) = carry.take() {
                    g_hu.add_assign(&cg)?;
                }
                carry = Some(nets.gm_up[s].backward(&mut self.motion, &m.gm_up[s], g_hu, acc_m)?);
            }
            let g_in = nets.gm_fc.backward(&mut self.motion, &m.gm_fc, carry.unwrap(), acc_m)?;
            let parts = g_in.split_axis1(&[cfg.content_dim, cfg.motion_dim, cfg.classes])?;
            g_zc.add_assign(&parts[0])?;
            if acc_m {
                let g_zm = match &lat.lstm {
                    Some(cache) => {
                        let mdim = cfg.motion_dim;
                        let gh = parts[1].clone().reshape(&[batch, mdim, 1, 1])?;
                        let gr =
                            convlstm_step_backward(&nets.lstm, cache, &self.lstm_params()?, &gh, &gh.zeros_like())?;
                        self.motion.accumulate(LSTM_WX, &gr.w_input)?;
                        self.motion.accumulate(LSTM_WH, &gr.w_hidden)?;
                        self.motion.accumulate(LSTM_B, &gr.bias)?;
                        gr.x.reshape(&[batch, mdim])?
                    }
                    None => parts[1].clone(),
                };
                let g_q = latent_grad(&lat.enc.q, &lat.eta, &g_zm, seeds.motion_kl)?;
                nets.em.backward(&mut self.motion, &lat.enc.trace, g_q, true)?;
            }
        }
        if acc_c {
            let g_q = latent_grad(&fwd.enc_c.q, &fwd.eta_c, &g_zc, seeds.content_kl)?;
            nets.ec.backward(&mut self.content, &fwd.enc_c.trace, g_q, true)?;
        }
        Ok(())
    }

    /// Decode a content latent through the content pathway alone.
    pub fn decode_content(&self, z_c: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
        Ok(self.decode(z_c, None, labels, FusionMode::Off)?.x_hat)
    }

    /// One recurrent generation step: decode `z_c` with the motion noise
    /// `eps_m` folded through the LSTM state. Returns the frame and the new
    /// state.
    pub fn generate_step(
        &self,
        z_c: &Tensor<T>,
        eps_m: &Tensor<T>,
        state: &LstmState<T>,
        labels: &[usize],
        mode: FusionMode,
    ) -> Result<(Tensor<T>, LstmState<T>)> {
        let (e_m, next, _) = self.lstm_forward(eps_m, state).at_stage("lstm")?;
        Ok((self.decode(z_c, Some(&e_m), labels, mode)?.x_hat, next))
    }
}

/// Gradient on the concatenated `(mean, log_var)` encoder output.
fn latent_grad<T: Real>(q: &GaussianParams<T>, eta: &Tensor<T>, g_z: &Tensor<T>, kl_weight: T) -> Result<Tensor<T>> {
    let (mut g_mu, mut g_lv) = q.sample_backward(eta, g_z)?;
    if kl_weight != T::zero() {
        let (km, kl) = kl_grad(q);
        g_mu.axpy(kl_weight, &km)?;
        g_lv.axpy(kl_weight, &kl)?;
    }
    Tensor::concat_axis1(&[&g_mu, &g_lv])
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

struct Encoded<T> {
    q: GaussianParams<T>,
    trace: Trace<T>,
}

struct MotionLatent<T> {
    enc: Encoded<T>,
    eta: Tensor<T>,
    e_m: Tensor<T>,
    lstm: Option<ConvLstmCache<T>>,
}

struct MotionDecoded<T> {
    kernels: Vec<Vec<KernelField<T>>>,
    masks: Vec<Vec<MaskField<T>>>,
    gm_fc: Trace<T>,
    gm_up: Vec<Trace<T>>,
    gm_trunk: Vec<Trace<T>>,
    gm_wv: Vec<Trace<T>>,
    gm_wh: Vec<Trace<T>>,
    gm_mask: Vec<Trace<T>>,
}

struct Decoded<T> {
    x_hat: Tensor<T>,
    content: Vec<Tensor<T>>,
    refined: Vec<Tensor<T>>,
    tilde: Vec<Tensor<T>>,
    motion: Option<MotionDecoded<T>>,
    gc_fc: Trace<T>,
    gc_stage: Vec<Trace<T>>,
    gc_head: Trace<T>,
}

/// Result of [`ModelBundle::forward_next_frame`], including everything the
/// backward pass needs.
pub struct NextFrame<T> {
    mode: FusionMode,
    enc_c: Encoded<T>,
    eta_c: Tensor<T>,
    motion: Option<MotionLatent<T>>,
    dec: Decoded<T>,
}

impl<T: Real> NextFrame<T> {
    /// Predicted frame `(B, C, H, W)`.
    pub fn x_hat(&self) -> &Tensor<T> {
        &self.dec.x_hat
    }

    /// Content maps before fusion, batched per scale `(B, d_s, l_s, l_s)`.
    pub fn content(&self) -> &[Tensor<T>] {
        &self.dec.content
    }

    /// Content maps after fusion; equal to [`NextFrame::content`] when fusion is off.
    pub fn refined(&self) -> &[Tensor<T>] {
        &self.dec.refined
    }

    /// Unfused content pyramid of one batch item.
    pub fn content_pyramid(&self, b: usize) -> Result<ContentPyramid<T>> {
        ContentPyramid::new(
            self.dec
                .content
                .iter()
                .map(|m| m.batch_item(b))
                .collect::<Result<_>>()?,
        )
    }

    /// Refined pyramid of one batch item.
    pub fn refined_pyramid(&self, b: usize) -> Result<ContentPyramid<T>> {
        ContentPyramid::new(
            self.dec
                .refined
                .iter()
                .map(|m| m.batch_item(b))
                .collect::<Result<_>>()?,
        )
    }

    pub fn content_posterior(&self) -> &GaussianParams<T> {
        &self.enc_c.q
    }

    pub fn motion_posterior(&self) -> Option<&GaussianParams<T>> {
        self.motion.as_ref().map(|m| &m.enc.q)
    }

    /// Kernel fields indexed `[scale][batch]`; empty when fusion is off.
    pub fn kernels(&self) -> &[Vec<KernelField<T>>] {
        self.dec.motion.as_ref().map(|m| m.kernels.as_slice()).unwrap_or(&[])
    }

    /// Masks indexed `[scale][batch]`; empty when fusion is off.
    pub fn masks(&self) -> &[Vec<MaskField<T>>] {
        self.dec.motion.as_ref().map(|m| m.masks.as_slice()).unwrap_or(&[])
    }
}

/// Loss gradients fed into [`ModelBundle::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct Seeds<T> {
    /// Gradient on the predicted frame.
    pub x_hat: Option<Tensor<T>>,
    /// Gradient on each refined map, coarsest first.
    pub refined: Vec<Option<Tensor<T>>>,
    /// Weight of the content KL term in the loss.
    pub content_kl: T,
    /// Weight of the motion KL term in the loss.
    pub motion_kl: T,
}

impl<T: Real> Default for Seeds<T> {
    fn default() -> Self {
        Seeds {
            x_hat: None,
            refined: Vec::new(),
            content_kl: T::zero(),
            motion_kl: T::zero(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> ModelConfig {
        ModelConfig {
            ngf: 4,
            content_dim: 6,
            motion_dim: 4,
            image_size: 16,
            ..ModelConfig::default()
        }
    }

    fn inputs(cfg: &ModelConfig, b: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>, Vec<usize>) {
        let mut rng = SeededRng::new(seed);
        let shape = [b, cfg.channels, cfg.image_size, cfg.image_size];
        let x = randn::<f64>(&mut rng, &shape).unwrap().map(|v| v.tanh());
        let dx = randn::<f64>(&mut rng, &shape).unwrap().scale(0.1);
        let labels = (0..b).map(|i| i % cfg.classes).collect();
        (x, dx, labels)
    }

    #[test]
    fn shapes_and_branch_widths() {
        let cfg = micro();
        let m = ModelBundle::<f64>::new(cfg.clone(), 1).unwrap();
        let (x, dx, labels) = inputs(&cfg, 2, 0);
        let out = m
            .forward_next_frame(&x, Some(&dx), &labels, FusionMode::On, None)
            .unwrap();
        assert_eq!(out.x_hat().shape(), x.shape());
        assert_eq!(out.content()[0].shape(), &[2, 8, 8, 8]);
        assert_eq!(out.content()[1].shape(), &[2, 4, 16, 16]);
        assert_eq!(out.kernels().len(), 2);
        assert_eq!(out.kernels()[1][0].kernel_size(), 3);
        assert_eq!(out.masks()[0][1].extent(), (8, 8));
        assert_eq!(m.params(Group::Motion).value("gm.wv0.w").unwrap().shape()[0], 3);
        assert_eq!(m.params(Group::Motion).value("gm.wh1.w").unwrap().shape()[0], 3);
        assert_eq!(m.params(Group::Motion).value("gm.mask0.w").unwrap().shape()[0], 1);
    }

    #[test]
    fn zero_masks_reproduce_content_pathway() {
        let cfg = micro();
        let m = ModelBundle::<f32>::new(cfg.clone(), 3).unwrap();
        let (x, dx, labels) = inputs(&cfg, 3, 5);
        let (x, dx) = (x.cast::<f32>(), dx.cast::<f32>());
        let own = m.forward_next_frame(&x, None, &labels, FusionMode::Off, None).unwrap();
        let zero = m
            .forward_next_frame(&x, Some(&dx), &labels, FusionMode::ZeroMask, None)
            .unwrap();
        assert_eq!(own.x_hat(), zero.x_hat());
        assert_eq!(zero.content(), zero.refined());
        let on = m
            .forward_next_frame(&x, Some(&dx), &labels, FusionMode::On, None)
            .unwrap();
        assert_ne!(own.x_hat(), on.x_hat());
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let cfg = micro();
        let m = ModelBundle::<f32>::new(cfg.clone(), 3).unwrap();
        let (x, dx, labels) = inputs(&cfg, 2, 9);
        let (x, dx) = (x.cast::<f32>(), dx.cast::<f32>());
        let a = m
            .forward_next_frame(&x, Some(&dx), &labels, FusionMode::On, None)
            .unwrap();
        let b = m
            .forward_next_frame(&x, Some(&dx), &labels, FusionMode::On, None)
            .unwrap();
        assert_eq!(a.x_hat(), b.x_hat());
        let mut r1 = SeededRng::new(4);
        let mut r2 = SeededRng::new(4);
        let c = m
            .forward_next_frame(&x, Some(&dx), &labels, FusionMode::On, Some(&mut r1))
            .unwrap();
        let d = m
            .forward_next_frame(&x, Some(&dx), &labels, FusionMode::On, Some(&mut r2))
            .unwrap();
        assert_eq!(c.x_hat(), d.x_hat());
        assert_ne!(a.x_hat(), c.x_hat());
    }

    #[test]
    fn input_errors_name_the_problem() {
        let cfg = micro();
        let m = ModelBundle::<f32>::new(cfg.clone(), 0).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 1, 16, 16]).unwrap();
        assert!(m.forward_next_frame(&x, None, &[7], FusionMode::Off, None).is_err());
        assert!(m.forward_next_frame(&x, None, &[0], FusionMode::On, None).is_err());
        let wrong = Tensor::<f32>::zeros(&[1, 1, 8, 8]).unwrap();
        assert!(m.forward_next_frame(&wrong, None, &[0], FusionMode::Off, None).is_err());
    }

    #[test]
    fn frozen_group_gets_no_gradient() {
        let cfg = micro();
        let mut m = ModelBundle::<f64>::new(cfg.clone(), 2).unwrap();
        let (x, dx, labels) = inputs(&cfg, 2, 1);
        let out = m
            .forward_next_frame(&x, Some(&dx), &labels, FusionMode::On, None)
            .unwrap();
        let seeds = Seeds {
            x_hat: Some(out.x_hat().map(|_| 1.0)),
            motion_kl: 1.0,
            content_kl: 1.0,
            ..Seeds::default()
        };
        m.backward(&out, &seeds, &[Group::Motion]).unwrap();
        assert!(m.params(Group::Content).iter().all(|(_, p)| p.grad.max_abs() == 0.0));
        assert!(m.params(Group::Motion).iter().any(|(_, p)| p.grad.max_abs() > 0.0));
        m.zero_grads();
        m.backward(&out, &seeds, &[Group::Content]).unwrap();
        assert!(m.params(Group::Motion).iter().all(|(_, p)| p.grad.max_abs() == 0.0));
        assert!(m.params(Group::Content).iter().any(|(_, p)| p.grad.max_abs() > 0.0));
    }

    #[test]
    fn from_params_checks_layout() {
        let cfg = micro();
        let m = ModelBundle::<f32>::new(cfg.clone(), 2).unwrap();
        let (c, mo) = m.clone().into_params();
        assert_eq!(ModelBundle::from_params(cfg.clone(), c.clone(), mo.clone()).unwrap(), m);
        assert!(ModelBundle::from_params(cfg, mo, c).is_err());
    }
}
