/**
 * Walk a TensorFlow.js LayersModel and translate it into interchange
 * layer entries, folding inference-time batch normalization into the
 * preceding affine layer.  Every source op must map to a supported kind
 * or the whole plan is rejected before anything is written.
 */

import type * as tf from "@tensorflow/tfjs";

import { BlobWriter, LayerEntry, writeModel } from "./interchange.js";

export interface PlanRow {
  source: string;
  op: string;
  kind: string; // interchange kind(s), comma separated for fused activations
}

export interface ExportPlan {
  source: string;
  inputShape: number[];
  rows: PlanRow[];
  foldBatchnorm: boolean;
}

export class UnsupportedOpError extends Error {}

interface PendingAffine {
  kind: "dense" | "conv2d";
  weights: Float32Array; // dense: (out,in) row-major; conv: (KH,KW,Cin,Cout)
  weightShape: number[];
  bias: Float32Array | null;
  outChannels: number;
  extra: Record<string, unknown>;
}

type Pending =
  | PendingAffine
  | { kind: "relu" | "sigmoid" | "tanh" | "flatten" }
  | {
      kind: "avg_pool" | "max_pool";
      extra: { window: number[]; stride: number[] };
    };

const ACTIVATIONS: Record<string, string> = {
  relu: "relu",
  sigmoid: "sigmoid",
  tanh: "tanh",
};

function symmetricSamePadding(
  input: number[],
  kernel: number[],
  stride: number[],
  dilation: number[],
  source: string,
): number[] {
  const pads: number[] = [];
  for (let d = 0; d < 2; d++) {
    const eff = dilation[d] * (kernel[d] - 1) + 1;
    const out = Math.ceil(input[d] / stride[d]);
    const total = Math.max((out - 1) * stride[d] + eff - input[d], 0);
    if (total % 2 !== 0) {
      throw new UnsupportedOpError(
        `${source}: 'same' padding is asymmetric for this geometry; ` +
          "re-export with 'valid' padding",
      );
    }
    pads.push(total / 2);
  }
  return pads;
}

function toPair(v: number | number[]): number[] {
  return Array.isArray(v) ? [v[0], v[1]] : [v, v];
}

function f32(t: tf.Tensor): Float32Array {
  // dataSync can return a view of the live tensor buffer; copy so that
  // batch-norm folding never mutates the source model
  return new Float32Array(t.dataSync() as Float32Array);
}

/** Fold gamma/sqrt(var+eps) scaling and the shifted bias into an affine layer. */
export function foldBatchNorm(
  target: PendingAffine,
  gamma: Float32Array,
  beta: Float32Array,
  mean: Float32Array,
  variance: Float32Array,
  epsilon: number,
): void {
  const c = target.outChannels;
  const scale = new Float32Array(c);
  for (let i = 0; i < c; i++) {
    scale[i] = gamma[i] / Math.sqrt(variance[i] + epsilon);
  }
  const w = target.weights;
  if (target.kind === "conv2d") {
    // kernel is (KH, KW, Cin, Cout): the output channel is the last axis
    for (let i = 0; i < w.length; i++) {
      w[i] *= scale[i % c];
    }
  } else {
    // dense weights are (out, in) row-major: one scale per row
    const inDim = target.weightShape[1];
    for (let row = 0; row < c; row++) {
      for (let col = 0; col < inDim; col++) {
        w[row * inDim + col] *= scale[row];
      }
    }
  }
  const bias = target.bias ?? new Float32Array(c);
  for (let i = 0; i < c; i++) {
    bias[i] = (bias[i] - mean[i]) * scale[i] + beta[i];
  }
  target.bias = bias;
}

function planAndCollect(
  model: tf.LayersModel,
  sourceName: string,
  foldBatchnorm: boolean,
): { plan: ExportPlan; pending: Pending[]; inputShape: number[] } {
  const batchShape = model.layers[0].batchInputShape;
  const inputShape = (batchShape.slice(1) as number[]).map((d) => {
    if (d === null || d === undefined) {
      throw new UnsupportedOpError("dynamic input dimensions are not exportable");
    }
    return d;
  });

  const rows: PlanRow[] = [];
  const pending: Pending[] = [];
  let spatial = inputShape.length === 3 ? [inputShape[0], inputShape[1]] : null;

  const pushActivation = (name: string, source: string, kinds: string[]) => {
    if (name === "linear") return;
    const kind = ACTIVATIONS[name];
    if (!kind) {
      throw new UnsupportedOpError(`${source}: unsupported activation '${name}'`);
    }
    pending.push({ kind } as Pending);
    kinds.push(kind);
  };

  for (const layer of model.layers) {
    const cls = layer.getClassName();
    const cfg = layer.getConfig() as Record<string, unknown>;
    const kinds: string[] = [];

    if (cls === "InputLayer" || cls === "Dropout") {
      rows.push({ source: layer.name, op: cls, kind: "(elided)" });
      continue;
    }
    if (cls === "Conv2D") {
      if (spatial === null) {
        throw new UnsupportedOpError(`${layer.name}: Conv2D needs an image input`);
      }
      const kernelSize = toPair(cfg.kernelSize as number | number[]);
      const strides = toPair(cfg.strides as number | number[]);
      const dilation = toPair((cfg.dilationRate as number | number[]) ?? 1);
      let padding = [0, 0];
      if (cfg.padding === "same") {
        padding = symmetricSamePadding(
          spatial, kernelSize, strides, dilation, layer.name,
        );
      } else if (cfg.padding !== "valid") {
        throw new UnsupportedOpError(
          `${layer.name}: unsupported padding '${cfg.padding}'`,
        );
      }
      const ws = layer.getWeights();
      const kernel = ws[0]; // (KH, KW, Cin, Cout), channels-last
      const bias = cfg.useBias ? ws[1] : null;
      const outC = kernel.shape[3] as number;
      pending.push({
        kind: "conv2d",
        weights: f32(kernel),
        weightShape: kernel.shape as number[],
        bias: bias ? f32(bias) : null,
        outChannels: outC,
        extra: { stride: strides, padding, dilation },
      });
      kinds.push("conv2d");
      spatial = spatial.map((dim, d) => {
        const eff = dilation[d] * (kernelSize[d] - 1) + 1;
        return Math.floor((dim + 2 * padding[d] - eff) / strides[d]) + 1;
      });
      pushActivation(
        (cfg.activation as string) ?? "linear", layer.name, kinds,
      );
    } else if (cls === "Dense") {
      const ws = layer.getWeights();
      const kernel = ws[0]; // (in, out): transpose to the (out, in) layout
      const bias = cfg.useBias ? ws[1] : null;
      const [inDim, outDim] = kernel.shape as number[];
      const src = f32(kernel);
      const transposed = new Float32Array(src.length);
      for (let i = 0; i < inDim; i++) {
        for (let o = 0; o < outDim; o++) {
          transposed[o * inDim + i] = src[i * outDim + o];
        }
      }
      pending.push({
        kind: "dense",
        weights: transposed,
        weightShape: [outDim, inDim],
        bias: bias ? f32(bias) : null,
        outChannels: outDim,
        extra: {},
      });
      kinds.push("dense");
      spatial = null;
      pushActivation(
        (cfg.activation as string) ?? "linear", layer.name, kinds,
      );
    } else if (cls === "Activation") {
      pushActivation(cfg.activation as string, layer.name, kinds);
    } else if (cls === "MaxPooling2D" || cls === "AveragePooling2D") {
      if (cfg.padding !== "valid") {
        throw new UnsupportedOpError(
          `${layer.name}: only 'valid' pooling is exportable`,
        );
      }
      const window = toPair(cfg.poolSize as number | number[]);
      const stride = toPair((cfg.strides as number | number[]) ?? window);
      const kind = cls === "MaxPooling2D" ? "max_pool" : "avg_pool";
      pending.push({ kind, extra: { window, stride } } as Pending);
      kinds.push(kind);
      if (spatial) {
        spatial = spatial.map(
          (dim, d) => Math.floor((dim - window[d]) / stride[d]) + 1,
        );
      }
    } else if (cls === "Flatten") {
      pending.push({ kind: "flatten" });
      kinds.push("flatten");
      spatial = null;
    } else if (cls === "BatchNormalization") {
      if (!foldBatchnorm) {
        throw new UnsupportedOpError(
          `${layer.name}: batch normalization present but folding is disabled`,
        );
      }
      const tail = pending[pending.length - 1];
      if (!tail || (tail.kind !== "conv2d" && tail.kind !== "dense")) {
        throw new UnsupportedOpError(
          `${layer.name}: batch norm must directly follow a conv/dense layer`,
        );
      }
      const [gamma, beta, mean, variance] = layer.getWeights().map(f32);
      const eps = (cfg.epsilon as number) ?? 1e-3;
      foldBatchNorm(tail as PendingAffine, gamma, beta, mean, variance, eps);
      kinds.push("(folded)");
    } else {
      throw new UnsupportedOpError(`${layer.name}: unsupported op ${cls}`);
    }
    rows.push({ source: layer.name, op: cls, kind: kinds.join(",") });
  }
  return {
    plan: { source: sourceName, inputShape, rows, foldBatchnorm },
    pending,
    inputShape,
  };
}

export function planExport(
  model: tf.LayersModel,
  sourceName: string,
  foldBatchnorm = true,
): ExportPlan {
  return planAndCollect(model, sourceName, foldBatchnorm).plan;
}

export function exportModel(
  model: tf.LayersModel,
  manifestPath: string,
  options: { name?: string; sourceName?: string; foldBatchnorm?: boolean } = {},
): ExportPlan {
  const sourceName = options.sourceName ?? "model";
  const { plan, pending, inputShape } = planAndCollect(
    model, sourceName, options.foldBatchnorm ?? true,
  );
  const blob = new BlobWriter();
  const layers: LayerEntry[] = [];
  for (const p of pending) {
    if (p.kind === "dense") {
      layers.push({
        kind: "dense",
        weight: blob.add(p.weights, p.weightShape),
        bias: p.bias ? blob.add(p.bias, [p.outChannels]) : null,
      });
    } else if (p.kind === "conv2d") {
      layers.push({
        kind: "conv2d",
        kernel: blob.add(p.weights, p.weightShape),
        bias: p.bias ? blob.add(p.bias, [p.outChannels]) : null,
        stride: (p.extra as Record<string, unknown>).stride,
        padding: (p.extra as Record<string, unknown>).padding,
        dilation: (p.extra as Record<string, unknown>).dilation,
      });
    } else if (p.kind === "avg_pool" || p.kind === "max_pool") {
      layers.push({ kind: p.kind, ...p.extra });
    } else {
      layers.push({ kind: p.kind });
    }
  }
  const display = inputShape.length === 3 ? [...inputShape] : null;
  writeModel(
    manifestPath,
    options.name ?? sourceName,
    inputShape,
    display,
    layers,
    blob,
  );
  return plan;
}
