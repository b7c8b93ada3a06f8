#include "factory/image.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "factory/autodiff.hpp"

namespace factory {

Image::Image(Tensor t) : pixels(std::move(t)) {
  if (pixels.ndim() != 3 || pixels.dim(0) != 3) {
    throw std::invalid_argument("Image: expected [3, H, W] tensor");
  }
}

std::vector<std::uint8_t> to_u8_rgb(const Image& img) {
  const int h = img.height(), w = img.width();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w * 3);
  std::size_t k = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::lround((img.at(c, y, x) + 1.0) * 127.5);
        if (v < 0) v = 0;
        if (v > 255) v = 255;
        out[k++] = static_cast<std::uint8_t>(v);
      }
  return out;
}

Image from_u8_rgb(const std::uint8_t* data, int height, int width) {
  Image img(height, width);
  std::size_t k = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = data[k++] / 127.5 - 1.0;
  return img;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  const int h = img.height(), w = img.width();
  auto u8 = to_u8_rgb(img);
  // OpenCV expects BGR order.
  for (std::size_t i = 0; i + 2 < u8.size(); i += 3) std::swap(u8[i], u8[i + 2]);
  cv::Mat bgr(h, w, CV_8UC3, u8.data());
  std::vector<std::uint8_t> bytes;
  cv::imencode(".png", bgr, bytes, {cv::IMWRITE_PNG_COMPRESSION, 6});
  return bytes;
}

void write_png(const Image& img, const std::string& path) {
  auto bytes = encode_png(img);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_png: cannot open " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write_png: write failed " + path);
}

Image decode_image(const std::vector<std::uint8_t>& bytes) {
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat m = cv::imdecode(raw, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw std::runtime_error("decode_image: not a decodable image");
  if (m.depth() != CV_8U) m.convertTo(m, CV_8U);
  if (!m.isContinuous()) m = m.clone();
  const int h = m.rows, w = m.cols, ch = m.channels();
  Image img(h, w);
  const std::uint8_t* p = m.ptr<std::uint8_t>(0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint8_t* px = p + (static_cast<std::size_t>(y) * w + x) * ch;
      std::uint8_t r, g, b;
      if (ch == 1) {
        r = g = b = px[0];
      } else if (ch == 3 || ch == 4) {
        b = px[0];
        g = px[1];
        r = px[2];
      } else {
        throw std::runtime_error("decode_image: unsupported channel count");
      }
      img.at(0, y, x) = r / 127.5 - 1.0;
      img.at(1, y, x) = g / 127.5 - 1.0;
      img.at(2, y, x) = b / 127.5 - 1.0;
    }
  return img;
}

Image read_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_image: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return decode_image(bytes);
}

Image resize_image(const Image& img, int out_h, int out_w) {
  if (img.height() == out_h && img.width() == out_w) return img;
  NoGradGuard ng;
  Tensor x({1, 3, img.height(), img.width()});
  for (std::int64_t i = 0; i < img.pixels.size(); ++i) x[i] = img.pixels[i];
  Var resized = resize_bilinear(make_const(std::move(x)), out_h, out_w);
  Tensor out({3, out_h, out_w});
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = resized->value[i];
  return Image(std::move(out));
}

Image hflip_image(const Image& img) {
  Image out(img.height(), img.width());
  const int w = img.width();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y, w - 1 - x);
  return out;
}

}  // namespace factory
