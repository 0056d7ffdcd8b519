#include "raingen/image.hpp"

#include <cmath>
#include <fstream>

namespace raingen {

namespace {

int read_pnm_token(std::istream& in) {
  // Skips whitespace and '#' comments, then reads one decimal token.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  RG_CHECK(c != EOF, "truncated PNM header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}

}  // namespace

RasterBytes read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  RG_CHECK(in.good(), "cannot open raster file ", path.string());
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  RG_CHECK(p == 'P' && (kind == '5' || kind == '6'),
           "unsupported raster format in ", path.string(), " (want binary P5/P6)");
  RasterBytes r;
  r.channels = kind == '6' ? 3 : 1;
  r.width = read_pnm_token(in);
  r.height = read_pnm_token(in);
  const int maxval = read_pnm_token(in);
  RG_CHECK(maxval == 255, "raster ", path.string(), " must be 8-bit (maxval 255), got ",
           maxval);
  RG_CHECK(r.width > 0 && r.height > 0, "raster ", path.string(), " has empty dimensions");
  const size_t count = static_cast<size_t>(r.width) * r.height * r.channels;
  r.bytes.resize(count);
  in.read(reinterpret_cast<char*>(r.bytes.data()), static_cast<std::streamsize>(count));
  RG_CHECK(static_cast<size_t>(in.gcount()) == count, "truncated raster data in ",
           path.string());
  return r;
}

void write_pnm(const std::filesystem::path& path, const RasterBytes& raster) {
  RG_CHECK(raster.channels == 1 || raster.channels == 3,
           "raster must have 1 or 3 channels, got ", raster.channels);
  RG_CHECK(raster.bytes.size() ==
               static_cast<size_t>(raster.width) * raster.height * raster.channels,
           "raster byte count does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  RG_CHECK(out.good(), "cannot write raster file ", path.string());
  out << (raster.channels == 3 ? "P6" : "P5") << "\n"
      << raster.width << " " << raster.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raster.bytes.data()),
            static_cast<std::streamsize>(raster.bytes.size()));
  RG_CHECK(out.good(), "failed writing raster file ", path.string());
}

Image image_from_raster(const RasterBytes& raster) {
  Image img(raster.height, raster.width, raster.channels);
  const size_t plane = static_cast<size_t>(raster.height) * raster.width;
  for (size_t i = 0; i < plane; ++i)
    for (int c = 0; c < raster.channels; ++c)
      img.pix[static_cast<size_t>(c) * plane + i] =
          raster.bytes[i * raster.channels + c] / 255.0;
  return img;
}

RasterBytes raster_from_image(const Image& img) {
  RasterBytes r;
  r.height = img.height;
  r.width = img.width;
  r.channels = img.channels;
  const size_t plane = static_cast<size_t>(img.height) * img.width;
  r.bytes.resize(plane * img.channels);
  for (size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < img.channels; ++c) {
      const double v = img.pix[static_cast<size_t>(c) * plane + i];
      const double q = std::round(v * 255.0);
      r.bytes[i * img.channels + c] =
          static_cast<uint8_t>(q < 0.0 ? 0.0 : (q > 255.0 ? 255.0 : q));
    }
  }
  return r;
}

Image read_image(const std::filesystem::path& path) {
  return image_from_raster(read_pnm(path));
}

void write_image(const std::filesystem::path& path, const Image& img) {
  write_pnm(path, raster_from_image(img));
}

ad::Tensor image_to_tensor(const Image& img) {
  RG_CHECK(img.channels == 3, "expected 3-channel image, got ", img.channels);
  return ad::Tensor({3, img.height, img.width}, img.pix);
}

Image tensor_to_image(const ad::Tensor& t) {
  RG_CHECK(t.rank() == 3 && t.shape[0] == 3, "expected [3,H,W] tensor, got ",
           ad::shape_str(t.shape));
  Image img(static_cast<int>(t.shape[1]), static_cast<int>(t.shape[2]), 3);
  img.pix = t.values;
  return img;
}

Image crop(const Image& img, int y0, int x0, int h, int w) {
  RG_CHECK(y0 >= 0 && x0 >= 0 && y0 + h <= img.height && x0 + w <= img.width,
           "crop window out of bounds");
  Image out(h, w, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

Image pad_to(const Image& img, int h, int w) {
  RG_CHECK(h >= img.height && w >= img.width, "pad_to target smaller than image");
  if (h == img.height && w == img.width) return img;
  Image out(h, w, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) =
            img.at(c, std::min(y, img.height - 1), std::min(x, img.width - 1));
  return out;
}

}  // namespace raingen
