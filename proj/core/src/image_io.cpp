#include "hvfi/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace hvfi {

namespace {

Image8 read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw ImageError("png: " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image8 img;
  img.width = static_cast<int>(png.width);
  img.height = static_cast<int>(png.height);
  img.rgb.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.rgb.data(), 0, nullptr)) {
    png_image_free(&png);
    throw ImageError("png: " + path.string() + ": " + png.message);
  }
  return img;
}

// Skips whitespace and '#' comments between PPM header fields.
int ppm_field(std::istream& is) {
  for (;;) {
    const int c = is.peek();
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v = -1;
  if (!(is >> v)) throw ImageError("ppm: malformed header");
  return v;
}

Image8 read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageError("cannot open " + path.string());
  char magic[2];
  is.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6') throw ImageError("ppm: only binary P6 is supported");
  Image8 img;
  img.width = ppm_field(is);
  img.height = ppm_field(is);
  const int maxval = ppm_field(is);
  if (img.width < 1 || img.height < 1) throw ImageError("ppm: bad size in " + path.string());
  if (maxval != 255) throw ImageError("ppm: only maxval 255 is supported");
  is.get();  // single whitespace before the raster
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw ImageError("ppm: truncated raster in " + path.string());
  }
  return img;
}

}  // namespace

std::uint8_t quantize(float value) {
  const float v = std::clamp(value, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::floor(v * 255.0f + 0.5f));
}

Image8 read_image8(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw ImageError("cannot open " + path.string());
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  if (probe.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  if (probe.gcount() >= 2 && sig[0] == 'P' && sig[1] == '6') return read_ppm(path);
  throw ImageError("unrecognised image format: " + path.string());
}

void write_png8(const std::filesystem::path& path, const Image8& image) {
  if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw ImageError("png: raster size does not match dimensions");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.rgb.data(), 0, nullptr)) {
    throw ImageError("png: " + path.string() + ": " + png.message);
  }
}

void write_ppm8(const std::filesystem::path& path, const Image8& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ImageError("cannot open " + path.string());
  os << "P6\n" << image.width << " " << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.rgb.data()),
           static_cast<std::streamsize>(image.rgb.size()));
  if (!os) throw ImageError("write failed: " + path.string());
}

Image8 to_image8(const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw DimensionError("to_image8: expected (1,3,H,W), got " + s.str());
  Image8 out;
  out.width = static_cast<int>(s.w);
  out.height = static_cast<int>(s.h);
  out.rgb.resize(static_cast<std::size_t>(s.numel()));
  const float* p = image.data().data();
  for (std::int64_t y = 0; y < s.h; ++y) {
    for (std::int64_t x = 0; x < s.w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        out.rgb[static_cast<std::size_t>((y * s.w + x) * 3 + ch)] =
            quantize(p[(ch * s.h + y) * s.w + x]);
      }
    }
  }
  return out;
}

Tensor<float> from_image8(const Image8& image) {
  const std::int64_t h = image.height;
  const std::int64_t w = image.width;
  Tensor<float> out(Shape{1, 3, h, w});
  float* p = out.mutable_data().data();
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        p[(ch * h + y) * w + x] =
            static_cast<float>(image.rgb[static_cast<std::size_t>((y * w + x) * 3 + ch)]) / 255.0f;
      }
    }
  }
  return out;
}

Tensor<float> read_image(const std::filesystem::path& path) {
  return from_image8(read_image8(path));
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
  write_png8(path, to_image8(image));
}

void save_dataset(const std::filesystem::path& dir, const std::vector<FrameTriplet>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.tsv");
  if (!index) throw ImageError("cannot write " + (dir / "index.tsv").string());
  index << "id\tinterval\tmotion_px\tflow_x\tflow_y\n";
  index << std::setprecision(17);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const FrameTriplet& t = samples[k];
    t.validate();
    std::ostringstream id;
    id << std::setw(5) << std::setfill('0') << k;
    write_png(dir / (id.str() + "_a.png"), t.frame_a);
    write_png(dir / (id.str() + "_b.png"), t.frame_b);
    write_png(dir / (id.str() + "_gt.png"), t.target);
    index << id.str() << '\t' << t.interval << '\t' << t.motion_px << '\t' << t.flow_x << '\t'
          << t.flow_y << '\n';
  }
  if (!index) throw ImageError("write failed: " + (dir / "index.tsv").string());
}

std::vector<FrameTriplet> load_dataset(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.tsv");
  if (!index) throw ImageError("missing dataset index " + (dir / "index.tsv").string());
  std::string line;
  std::getline(index, line);  // header
  std::vector<FrameTriplet> out;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id;
    FrameTriplet t;
    if (!(row >> id >> t.interval >> t.motion_px >> t.flow_x >> t.flow_y)) {
      throw ImageError("dataset index: malformed row '" + line + "'");
    }
    t.frame_a = read_image(dir / (id + "_a.png"));
    t.frame_b = read_image(dir / (id + "_b.png"));
    t.target = read_image(dir / (id + "_gt.png"));
    t.validate();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace hvfi
