import init, { Demo } from "./pkg/hcd_web.js";

const $ = (id) => document.getElementById(id);
const status = (msg) => { $("status").textContent = msg; };

function draw(canvas, rgba, w, h) {
  canvas.width = w;
  canvas.height = h;
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

// Let the status line repaint before a long synchronous call.
const nextFrame = () => new Promise((r) => requestAnimationFrame(() => setTimeout(r, 0)));

await init();
const demo = new Demo();
let input = null;
status("ready: untrained model (behaves like bicubic)");

$("train").onclick = async () => {
  status("training...");
  await nextFrame();
  const t0 = performance.now();
  try {
    const gain = demo.train(Number($("epochs").value), 0n);
    status(`trained in ${((performance.now() - t0) / 1000).toFixed(1)} s, held-out gain over bicubic ${gain.toFixed(2)} dB`);
  } catch (e) {
    status(`training failed: ${e.message ?? e}`);
  }
};

$("model").onchange = async (ev) => {
  const file = ev.target.files[0];
  if (!file) return;
  try {
    demo.load_model(await file.text());
    status(`loaded ${file.name}`);
  } catch (e) {
    status(`could not load ${file.name}: ${e.message ?? e}`);
  }
};

$("image").onchange = async (ev) => {
  const file = ev.target.files[0];
  if (!file) return;
  const bitmap = await createImageBitmap(file);
  const c = $("hr");
  c.width = bitmap.width;
  c.height = bitmap.height;
  const ctx = c.getContext("2d");
  ctx.drawImage(bitmap, 0, 0);
  input = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
  $("run").disabled = false;
  status(`${file.name}: ${bitmap.width}x${bitmap.height}`);
};

$("run").onclick = async () => {
  if (!input) return;
  status("optimizing...");
  await nextFrame();
  const t0 = performance.now();
  try {
    const out = demo.rescale(
      new Uint8Array(input.data.buffer), input.width, input.height,
      $("scheme").value, Number($("iters").value), Number($("alpha").value), Number($("epsilon").value),
    );
    draw($("lr"), out.lr_rgba(), out.lr_width(), out.lr_height());
    draw($("recon"), out.recon_rgba(), out.width(), out.height());
    draw($("delta"), out.delta_rgba(), out.lr_width(), out.lr_height());
    status(`${$("scheme").value}: PSNR-Y ${out.psnr().toFixed(2)} dB, SSIM-Y ${out.ssim().toFixed(4)}, ` +
      `max |delta| ${out.max_delta().toExponential(2)} (${((performance.now() - t0) / 1000).toFixed(1)} s)`);
    out.free();
  } catch (e) {
    status(`failed: ${e.message ?? e}`);
  }
};
