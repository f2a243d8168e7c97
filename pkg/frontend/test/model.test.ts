import * as tf from "@tensorflow/tfjs";
import { describe, expect, it } from "vitest";

import { SpecInvalid } from "../src/errors";
import { MAX_PARAMS, buildModel, convParamCounts, validateSpec } from "../src/model";

const SMALL: [number, number, number] = [16, 16, 8];

describe("validateSpec", () => {
  it("fills in defaults", () => {
    const r = validateSpec({ variant: "single-encoder", modalities: ["Ki"] });
    expect(r.baseFilters).toBe(8);
    expect(r.inputDims).toEqual([170, 170, 120]);
    expect(r.seed).toBe(0);
  });

  it("rejects wrong modality counts", () => {
    expect(() => validateSpec({ variant: "single-encoder", modalities: ["MR", "Ki"] }))
      .toThrow(SpecInvalid);
    expect(() => validateSpec({ variant: "dual-encoder", modalities: ["MR"] }))
      .toThrow(SpecInvalid);
  });

  it("rejects duplicate modalities", () => {
    expect(() => validateSpec({ variant: "dual-channel", modalities: ["Ki", "Ki"] }))
      .toThrow(SpecInvalid);
  });

  it("rejects dims too small for three pooling stages", () => {
    expect(() => validateSpec({
      variant: "single-encoder", modalities: ["Ki"], inputDims: [7, 16, 16],
    })).toThrow(SpecInvalid);
  });
});

describe("buildModel parameter counts", () => {
  // conv3d params = filters * (kernel^3 * in_channels + 1)
  it("single-encoder conv layers have 448 / 13,856 / 27,680 params", () => {
    const m = buildModel({
      variant: "single-encoder", modalities: ["Ki"], inputDims: SMALL,
    });
    expect(convParamCounts(m)).toEqual([448, 13_856, 27_680]);
    m.dispose();
  });

  it("dual-channel first conv sees 2 input channels: 880 params", () => {
    const m = buildModel({
      variant: "dual-channel", modalities: ["MR", "Ki"], inputDims: SMALL,
    });
    expect(convParamCounts(m)).toEqual([880, 13_856, 27_680]);
    m.dispose();
  });

  it("dual-encoder has two independent encoders", () => {
    const m = buildModel({
      variant: "dual-encoder", modalities: ["MR", "Ki"], inputDims: SMALL,
    });
    // the two encoder branches interleave in graph order
    expect(convParamCounts(m)).toEqual([448, 448, 13_856, 13_856, 27_680, 27_680]);
    expect(m.inputs.length).toBe(2);
    m.dispose();
  });

  it("stays under the parameter budget at full input size", () => {
    // head size depends on input dims; the full-size dual-encoder is the
    // largest variant and must stay under 30M parameters
    const m = buildModel({ variant: "dual-encoder", modalities: ["MR", "Ki"] });
    expect(m.countParams()).toBeLessThan(MAX_PARAMS);
    expect(m.countParams()).toBe(27_179_202);
    m.dispose();
  });
});

describe("buildModel behavior", () => {
  it("produces softmax rows summing to 1", async () => {
    const m = buildModel({
      variant: "single-encoder", modalities: ["Ki"], inputDims: SMALL,
    });
    const x = tf.randomNormal([3, 16, 16, 8, 1], 0, 1, "float32", 7);
    const p = m.predict(x) as tf.Tensor;
    expect(p.shape).toEqual([3, 2]);
    const rows = (await p.array()) as number[][];
    for (const row of rows) {
      expect(row[0] + row[1]).toBeCloseTo(1, 5);
      expect(row[0]).toBeGreaterThanOrEqual(0);
    }
    x.dispose(); p.dispose(); m.dispose();
  });

  it("is deterministic at inference (dropout disabled)", async () => {
    const m = buildModel({
      variant: "single-encoder", modalities: ["Ki"], inputDims: SMALL, seed: 3,
    });
    const x = tf.randomNormal([2, 16, 16, 8, 1], 0, 1, "float32", 11);
    const a = await (m.predict(x) as tf.Tensor).data();
    const b = await (m.predict(x) as tf.Tensor).data();
    expect([...a]).toEqual([...b]);
    x.dispose(); m.dispose();
  });

  it("same seed gives identical initial weights, different seeds differ", async () => {
    const build = (seed: number) => buildModel({
      variant: "single-encoder", modalities: ["Ki"], inputDims: SMALL, seed,
    });
    const m1 = build(5), m2 = build(5), m3 = build(6);
    const w1 = await m1.getWeights()[0].data();
    const w2 = await m2.getWeights()[0].data();
    const w3 = await m3.getWeights()[0].data();
    expect([...w1]).toEqual([...w2]);
    expect([...w1]).not.toEqual([...w3]);
    m1.dispose(); m2.dispose(); m3.dispose();
  });

  it("dual-encoder branches have independent weights", async () => {
    const m = buildModel({
      variant: "dual-encoder", modalities: ["MR", "Ki"], inputDims: SMALL, seed: 1,
    });
    const c1 = m.getLayer("enc1_conv1").getWeights()[0];
    const c2 = m.getLayer("enc2_conv1").getWeights()[0];
    expect([...(await c1.data())]).not.toEqual([...(await c2.data())]);
    m.dispose();
  });

  it("rejects an over-budget architecture", () => {
    expect(() => buildModel({
      variant: "dual-encoder", modalities: ["MR", "Ki"], baseFilters: 16,
    })).toThrow(SpecInvalid);
  });
});
