/**
 * Load a TensorFlow.js LayersModel from disk without the native node
 * backend: read model.json and the weight shards manually and hand
 * them to tf.loadLayersModel through an in-memory IO handler.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import * as tf from "@tensorflow/tfjs";

export async function loadLayersModelFromDisk(
  modelJsonPath: string,
): Promise<tf.LayersModel> {
  const raw = fs.readFileSync(modelJsonPath, "utf8");
  const modelJson = JSON.parse(raw) as tf.io.ModelJSON;
  const dir = path.dirname(modelJsonPath);

  let weightSpecs: tf.io.WeightsManifestEntry[] | undefined;
  let weightData: ArrayBuffer | undefined;
  if (modelJson.weightsManifest) {
    const buffers: Buffer[] = [];
    weightSpecs = [];
    for (const group of modelJson.weightsManifest) {
      for (const shard of group.paths) {
        buffers.push(fs.readFileSync(path.join(dir, shard)));
      }
      weightSpecs.push(...group.weights);
    }
    const joined = Buffer.concat(buffers);
    weightData = joined.buffer.slice(
      joined.byteOffset,
      joined.byteOffset + joined.byteLength,
    );
  }

  return tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: modelJson.modelTopology,
      weightSpecs,
      weightData,
    }),
  );
}

/** Save a LayersModel as model.json + one weights shard in a directory. */
export async function saveLayersModelToDisk(
  model: tf.LayersModel,
  dir: string,
): Promise<string> {
  fs.mkdirSync(dir, { recursive: true });
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      const weightData = artifacts.weightData as ArrayBuffer;
      fs.writeFileSync(path.join(dir, "weights.bin"), Buffer.from(weightData));
      const modelJson = {
        modelTopology: artifacts.modelTopology,
        format: artifacts.format,
        generatedBy: artifacts.generatedBy,
        convertedBy: artifacts.convertedBy ?? null,
        weightsManifest: [
          { paths: ["weights.bin"], weights: artifacts.weightSpecs },
        ],
      };
      fs.writeFileSync(
        path.join(dir, "model.json"),
        JSON.stringify(modelJson, null, 2),
      );
      return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: "JSON" } };
    }),
  );
  return path.join(dir, "model.json");
}
