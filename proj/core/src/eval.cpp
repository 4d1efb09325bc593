#include "hvfi/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "hvfi/checkpoint.hpp"
#include "hvfi/image_io.hpp"
#include "hvfi/metrics.hpp"

namespace hvfi {

namespace {

// Index into [0, n) mirrored at both ends without repeating the edge.
std::int64_t mirror(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

std::int64_t EvalReport::samples() const {
  std::int64_t n = 0;
  for (const auto& m : intervals) n += m.samples;
  return n;
}

std::string EvalReport::tsv() const {
  std::ostringstream os;
  os << "interval\tsamples\tpsnr\tssim\n" << std::fixed;
  for (const auto& m : intervals) {
    os << m.interval << '\t' << m.samples << '\t' << std::setprecision(4) << m.psnr << '\t'
       << std::setprecision(6) << m.ssim << '\n';
  }
  return os.str();
}

std::string EvalReport::json() const {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["samples"] = samples();
  j["intervals"] = nlohmann::ordered_json::array();
  for (const auto& m : intervals) {
    j["intervals"].push_back(
        {{"interval", m.interval}, {"samples", m.samples}, {"psnr", m.psnr}, {"ssim", m.ssim}});
  }
  return j.dump(2) + "\n";
}

EvalReport eval_run(const Interpolator& interpolate, const std::vector<FrameTriplet>& data,
                    const std::vector<int>& intervals, const std::string& model_id,
                    int workers) {
  if (data.empty()) throw std::invalid_argument("eval: empty dataset");
  if (intervals.empty()) throw std::invalid_argument("eval: no intervals requested");

  std::vector<std::size_t> picked;
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (std::find(intervals.begin(), intervals.end(), data[k].interval) != intervals.end()) {
      picked.push_back(k);
    }
  }
  std::vector<double> psnrs(picked.size()), ssims(picked.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t p = first; p < picked.size(); p += stride) {
      const FrameTriplet& s = data[picked[p]];
      const Tensor<float> out = interpolate(s.frame_a, s.frame_b);
      psnrs[p] = psnr(out, s.target);
      ssims[p] = ssim(out, s.target);
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  EvalReport report;
  report.model = model_id;
  for (int i : intervals) {
    IntervalMetrics m;
    m.interval = i;
    for (std::size_t p = 0; p < picked.size(); ++p) {
      if (data[picked[p]].interval != i) continue;
      m.psnr += psnrs[p];
      m.ssim += ssims[p];
      ++m.samples;
    }
    if (m.samples == 0) {
      throw std::invalid_argument("eval: no samples with interval " + std::to_string(i));
    }
    m.psnr /= static_cast<double>(m.samples);
    m.ssim /= static_cast<double>(m.samples);
    report.intervals.push_back(m);
  }
  return report;
}

EvalReport eval_run(const Model<float>& model, const std::vector<FrameTriplet>& data,
                    const std::vector<int>& intervals, const std::string& model_id,
                    int workers) {
  return eval_run(
      [&](const Tensor<float>& a, const Tensor<float>& b) {
        return interpolate_any_size(model, a, b);
      },
      data, intervals, model_id, workers);
}

Tensor<float> reflect_pad(const Tensor<float>& image, std::int64_t bottom, std::int64_t right) {
  if (bottom < 0 || right < 0) throw std::invalid_argument("reflect_pad: negative padding");
  const Shape s = image.shape();
  const Shape o{s.n, s.c, s.h + bottom, s.w + right};
  Tensor<float> out(o);
  const auto src = image.data();
  auto dst = out.mutable_data();
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
    for (std::int64_t y = 0; y < o.h; ++y) {
      const std::int64_t sy = mirror(y, s.h);
      for (std::int64_t x = 0; x < o.w; ++x) {
        dst[(nc * o.h + y) * o.w + x] = src[(nc * s.h + sy) * s.w + mirror(x, s.w)];
      }
    }
  }
  return out;
}

Tensor<float> crop_top_left(const Tensor<float>& image, std::int64_t h, std::int64_t w) {
  const Shape s = image.shape();
  if (h > s.h || w > s.w || h <= 0 || w <= 0) {
    throw DimensionError("crop_top_left: " + std::to_string(h) + "x" + std::to_string(w) +
                         " does not fit in " + s.str());
  }
  Tensor<float> out(Shape{s.n, s.c, h, w});
  const auto src = image.data();
  auto dst = out.mutable_data();
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
    for (std::int64_t y = 0; y < h; ++y) {
      std::copy_n(src.begin() + (nc * s.h + y) * s.w, w, dst.begin() + (nc * h + y) * w);
    }
  }
  return out;
}

Tensor<float> interpolate_any_size(const Model<float>& model, const Tensor<float>& frame0,
                                   const Tensor<float>& frame1) {
  if (frame0.shape() != frame1.shape()) {
    throw DimensionError("interpolate: frame sizes differ (" + frame0.shape().str() + " vs " +
                         frame1.shape().str() + ")");
  }
  const Shape s = frame0.shape();
  const std::int64_t m = std::int64_t{1} << (model.config().levels - 1);
  const std::int64_t ph = (m - s.h % m) % m, pw = (m - s.w % m) % m;
  if (ph == 0 && pw == 0) return model.interpolate(frame0, frame1);
  const auto out = model.interpolate(reflect_pad(frame0, ph, pw), reflect_pad(frame1, ph, pw));
  return crop_top_left(out, s.h, s.w);
}

void interp_files(const std::filesystem::path& model_path, const std::filesystem::path& frame0,
                  const std::filesystem::path& frame1, const std::filesystem::path& out) {
  const Model<float> model = load_model(model_path);
  write_png(out, interpolate_any_size(model, read_image(frame0), read_image(frame1)));
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  std::filesystem::path json = path, tsv = path;
  if (path.extension() == ".json") {
    tsv.replace_extension(".tsv");
  } else {
    json.replace_extension(".json");
  }
  write_text(tsv, report.tsv());
  write_text(json, report.json());
}

}  // namespace hvfi
