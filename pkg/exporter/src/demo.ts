/**
 * Built-in demo models with seeded deterministic weights, standing in
 * for model-zoo downloads so the exporter can be exercised offline.
 */

import * as tf from "@tensorflow/tfjs";

/** mulberry32: tiny deterministic PRNG, good enough for weight init. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussian(rand: () => number): number {
  const u = Math.max(rand(), 1e-12);
  const v = rand();
  return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
}

function fill(shape: number[], std: number, rand: () => number): tf.Tensor {
  const n = shape.reduce((a, b) => a * b, 1);
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    data[i] = gaussian(rand) * std;
  }
  return tf.tensor(data, shape);
}

function seedWeights(model: tf.LayersModel, seed: number): void {
  const rand = mulberry32(seed);
  for (const layer of model.layers) {
    const seeded = layer.getWeights().map((w) => {
      const fanIn = w.shape.length > 1
        ? w.shape.slice(0, -1).reduce((a, b) => a * (b ?? 1), 1)
        : w.shape[0] ?? 1;
      if (w.shape.length === 1) {
        // biases and batch-norm vectors: small offsets around the default
        return tf.add(w, fill(w.shape as number[], 0.05, rand));
      }
      return fill(w.shape as number[], Math.sqrt(2.0 / fanIn), rand);
    });
    layer.setWeights(seeded);
  }
}

export function demoDense(seed = 11): tf.LayersModel {
  const model = tf.sequential({
    layers: [
      tf.layers.dense({ inputShape: [12], units: 8, activation: "relu" }),
      tf.layers.dense({ units: 4 }),
    ],
  });
  seedWeights(model, seed);
  return model;
}

export function demoCnn(resolution = 32, seed = 23): tf.LayersModel {
  const model = tf.sequential({
    layers: [
      tf.layers.conv2d({
        inputShape: [resolution, resolution, 3],
        filters: 8,
        kernelSize: 3,
        strides: 2,
        padding: "valid",
      }),
      tf.layers.batchNormalization(),
      tf.layers.activation({ activation: "relu" }),
      tf.layers.conv2d({
        filters: 8,
        kernelSize: 3,
        strides: 2,
        padding: "valid",
        activation: "relu",
      }),
      tf.layers.averagePooling2d({ poolSize: 2 }),
      tf.layers.flatten(),
      tf.layers.dense({ units: 32, activation: "relu" }),
      tf.layers.dense({ units: 10 }),
    ],
  });
  seedWeights(model, seed);
  return model;
}

export const DEMO_MODELS: Record<string, (res: number) => tf.LayersModel> = {
  "demo-dense": () => demoDense(),
  "demo-cnn": (res) => demoCnn(res),
};
