#include <doctest.h>

#include "losses.hpp"
#include "test_support.hpp"

using namespace flowparts;

namespace {

std::vector<double>* const kNoGrad = nullptr;
GradSet<double>* const kNoGradSet = nullptr;

std::vector<double> image_vec(const Image& img) { return {img.data.begin(), img.data.end()}; }

std::vector<double> gt_flow_vec(const FlowField& f) { return {f.data.begin(), f.data.end()}; }

// A square covering the whole frame, textured with horizontal stripes, moved
// sideways: every pixel has a correspondence and nothing is disoccluded.
FramePairSample striped_pair(int size, int shift_px) {
  Image stripes(8, 8, 3);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      for (int c = 0; c < 3; ++c) stripes.at(i, j, c) = static_cast<float>((i * 37 + c * 11) % 256) / 255.0f;
  AssetStore store;
  store.add_texture(stripes);
  SceneSpec scene;
  ShapeSpec s;
  s.kind = ShapeKind::kSquare;
  s.scale = 3.0;
  s.texture_id = 0;
  scene.shapes.push_back(s);
  SimilarityPose m;
  m.tx = 2.0 * shift_px / size;
  scene.motions.push_back(m);
  return make_sample(scene, size, size, store);
}

double oracle_centroid_loss(const std::vector<double>& masks, const CoordGrid& grid) {
  const int n = grid.size();
  double total = 0.0;
  for (size_t k = 0; k < masks.size() / n; ++k) {
    double mass = 0.0, sx = 0.0, sy = 0.0;
    for (int i = 0; i < grid.height; ++i) {
      for (int j = 0; j < grid.width; ++j) {
        const double m = masks[k * n + i * grid.width + j];
        mass += m;
        sx += m * fpt::pixel_center(j, grid.width);
        sy += m * fpt::pixel_center(i, grid.height);
      }
    }
    const double cx = sx / (mass + 1e-6), cy = sy / (mass + 1e-6);
    total += cx * cx + cy * cy;
  }
  return total;
}

double oracle_smooth(const std::vector<double>& flow, int h, int w) {
  double sx = 0.0, sy = 0.0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int c = 0; c < 2; ++c) {
        const double v = flow[(i * w + j) * 2 + c];
        if (j + 1 < w) sx += std::pow(flow[(i * w + j + 1) * 2 + c] - v, 2);
        if (i + 1 < h) sy += std::pow(flow[((i + 1) * w + j) * 2 + c] - v, 2);
      }
    }
  }
  return sx / (h * (w - 1)) + sy / ((h - 1) * w);
}

template <typename F>
std::vector<double> numeric_gradient(std::vector<double>& x, F&& f, double eps) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f();
    x[i] = keep - eps;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("render_loss examples") {
  std::mt19937_64 rng(1);
  const auto img = fpt::random_image(8, 9, rng);
  const auto a = image_vec(img);
  CHECK(render_loss(a, a, 8, 9, 3, std::vector<double>(8 * 9 * 2, 0.0), kNoGrad) == 0.0);

  const auto pair = striped_pair(24, 3);
  const auto ia = image_vec(pair.image_a), ib = image_vec(pair.image_b);
  const double with_gt = render_loss(ia, ib, 24, 24, 3, gt_flow_vec(pair.gt_flow), kNoGrad);
  CHECK(with_gt < 1e-3);

  // A Geo pair: ground-truth flow beats zero flow.
  SceneSpec scene;
  ShapeSpec s;
  s.kind = ShapeKind::kCircle;
  s.scale = 0.4;
  s.color = {0.9f, 0.2f, 0.1f};
  scene.shapes.push_back(s);
  SimilarityPose m;
  m.tx = 2.0 * 4 / 32;
  m.ty = -2.0 * 2 / 32;
  scene.motions.push_back(m);
  const auto geo = make_sample(scene, 32, 32, {});
  const auto ga = image_vec(geo.image_a), gb = image_vec(geo.image_b);
  const double gt = render_loss(ga, gb, 32, 32, 3, gt_flow_vec(geo.gt_flow), kNoGrad);
  const double zero = render_loss(ga, gb, 32, 32, 3, std::vector<double>(32 * 32 * 2, 0.0), kNoGrad);
  CHECK(zero > gt);

  try {
    render_loss(a, a, 8, 9, 3, std::vector<double>(5), kNoGrad);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShape);
  }
}

TEST_CASE("center_loss examples and oracle") {
  const auto grid = make_grid(16, 16);
  std::vector<double> sym(256);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) sym[i * 16 + j] = std::exp(-(std::pow(j - 7.5, 2) + std::pow(i - 7.5, 2)) / 10);
  CHECK(std::abs(center_loss(sym, grid, kNoGrad)) < 1e-20);

  CoordGrid point;
  point.height = 1;
  point.width = 1;
  point.coords = {0.5, 0.0};
  CHECK(center_loss(std::vector<double>{1.0}, point, kNoGrad) ==
        doctest::Approx(0.25 / std::pow(1.0 + 1e-6, 2)).epsilon(1e-12));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> masks(3 * 256);
  for (auto& v : masks) v = u(rng);
  CHECK(center_loss(masks, grid, kNoGrad) ==
        doctest::Approx(oracle_centroid_loss(masks, grid)).epsilon(1e-10));

  // An all-zero mask stays finite.
  CHECK(center_loss(std::vector<double>(256, 0.0), grid, kNoGrad) == 0.0);
}

TEST_CASE("smooth_loss examples and oracle") {
  const int h = 5, w = 7;
  std::vector<double> flow(h * w * 2);
  for (int p = 0; p < h * w; ++p) {
    flow[2 * p] = 1.5;
    flow[2 * p + 1] = -2.0;
  }
  CHECK(smooth_loss(flow, h, w, kNoGrad) == 0.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      flow[(i * w + j) * 2] = j;
      flow[(i * w + j) * 2 + 1] = 0.0;
    }
  CHECK(smooth_loss(flow, h, w, kNoGrad) == doctest::Approx(1.0));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 3.0);
  for (auto& v : flow) v = n(rng);
  CHECK(smooth_loss(flow, h, w, kNoGrad) ==
        doctest::Approx(oracle_smooth(flow, h, w)).epsilon(1e-12));
}

TEST_CASE("per-term gradients match finite differences") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 0.95);

  std::vector<double> flow(6 * 5 * 2);
  for (auto& v : flow) v = n(rng);
  std::vector<double> g;
  smooth_loss(flow, 6, 5, &g);
  auto num = numeric_gradient(flow, [&] { return smooth_loss(flow, 6, 5, kNoGrad); }, 1e-6);
  CHECK(fpt::relative_error(g, num) < 1e-6);

  const auto grid = make_grid(6, 6);
  std::vector<double> masks(2 * 36);
  for (auto& v : masks) v = u(rng);
  center_loss(masks, grid, &g);
  num = numeric_gradient(masks, [&] { return center_loss(masks, grid, kNoGrad); }, 1e-6);
  CHECK(fpt::relative_error(g, num) < 1e-6);

  // Bilinear warp is piecewise smooth; keep samples away from integer taps.
  std::vector<double> a(6 * 5 * 3), b(6 * 5 * 3);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  for (size_t i = 0; i < flow.size(); ++i) flow[i] = 0.3 + 0.4 * u(rng) + static_cast<double>(i % 3) - 1.0;
  render_loss(a, b, 6, 5, 3, flow, &g);
  num = numeric_gradient(flow, [&] { return render_loss(a, b, 6, 5, 3, flow, kNoGrad); }, 1e-7);
  CHECK(fpt::relative_error(g, num) < 1e-5);
}

TEST_CASE("total_loss: weighting, identity and non-negativity") {
  const auto cfg = fpt::tiny_model_config(8, 2, 8);
  FlowCapsuleModel<double> model(cfg, 5);
  auto gen = fpt::small_geo_config(8);
  std::vector<FramePairSample> samples;
  for (int i = 0; i < 3; ++i) {
    samples.push_back(make_sample(sample_scene(sample_seed(1, "train", i), gen), 8, 8, {}));
  }
  std::vector<FramePair> batch;
  for (const auto& s : samples) batch.push_back({&s.image_a, &s.image_b});

  LossOptions opts;
  opts.weights = {0.0, 0.0};
  auto out = total_loss(model, std::span<const FramePair>(batch), opts, kNoGradSet);
  CHECK(out.total == out.render);

  opts.weights = {0.3, 0.7};
  out = total_loss(model, std::span<const FramePair>(batch), opts, kNoGradSet);
  CHECK(out.total == doctest::Approx(out.render + 0.3 * out.center + 0.7 * out.smooth).epsilon(1e-12));
  CHECK(out.render >= 0.0);
  CHECK(out.center >= 0.0);
  CHECK(out.smooth >= 0.0);

  // Mean over the batch equals the mean of per-pair losses.
  double mean_render = 0.0;
  for (const auto& p : batch) {
    mean_render += total_loss(model, std::span<const FramePair>(&p, 1), opts, kNoGradSet).render / 3.0;
  }
  CHECK(out.render == doctest::Approx(mean_render).epsilon(1e-12));

  const std::vector<FramePair> same{{&samples[0].image_a, &samples[0].image_a}};
  out = total_loss(model, std::span<const FramePair>(same), opts, kNoGradSet);
  CHECK(out.render < 1e-12);
  CHECK(out.smooth < 1e-12);
}

TEST_CASE("total_loss gradient matches finite differences over every parameter array") {
  const auto cfg = fpt::tiny_model_config(8, 2, 8);
  FlowCapsuleModel<double> model(cfg, 6);
  auto gen = fpt::small_geo_config(8);
  std::vector<FramePairSample> samples;
  for (int i = 0; i < 2; ++i) {
    samples.push_back(make_sample(sample_scene(sample_seed(3, "train", i), gen), 8, 8, {}));
  }
  std::vector<FramePair> batch;
  for (const auto& s : samples) batch.push_back({&s.image_a, &s.image_b});
  LossOptions opts;
  opts.weights = {0.5, 0.05};
  opts.center_grid = 6;

  GradSet<double> grads(model.params().size());
  for (size_t i = 0; i < grads.size(); ++i) grads[i].assign(model.params().values[i].size(), 0.0);
  total_loss(model, std::span<const FramePair>(batch), opts, &grads);

  const double eps = 1e-6;
  auto loss = [&] { return total_loss(model, std::span<const FramePair>(batch), opts, kNoGradSet).total; };
  for (size_t i = 0; i < model.params().size(); ++i) {
    auto& vals = model.params().values[i];
    const size_t stride = std::max<size_t>(1, vals.size() / 6);
    std::vector<double> analytic, numeric;
    for (size_t j = 0; j < vals.size(); j += stride) {
      const double keep = vals[j];
      vals[j] = keep + eps;
      const double up = loss();
      vals[j] = keep - eps;
      const double down = loss();
      vals[j] = keep;
      analytic.push_back(grads[i][j]);
      numeric.push_back((up - down) / (2 * eps));
    }
    CAPTURE(model.params().names[i]);
    CHECK(fpt::relative_error(analytic, numeric) < 1e-2);
  }
}

TEST_CASE("loss options parse from JSON") {
  const auto o = loss_options_from_json({{"w_center", 0.5}, {"w_smooth", 0.25}, {"center_grid", 8}});
  CHECK(o.weights.center == 0.5);
  CHECK(o.weights.smooth == 0.25);
  CHECK(o.center_grid == 8);
  const auto back = loss_options_from_json(loss_options_to_json(o));
  CHECK(back.weights.center == 0.5);
  CHECK(back.center_grid == 8);
}

}  // TEST_SUITE
