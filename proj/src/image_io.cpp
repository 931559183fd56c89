#include "expredit/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace expredit {

Tensor load_image(const std::string& path, int resolution) {
  require(resolution >= 1, "load_image: bad resolution");
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  require(!bgr.empty(), "load_image: cannot decode " + path);

  const int side = std::min(bgr.rows, bgr.cols);
  const int y0 = (bgr.rows - side) / 2;
  const int x0 = (bgr.cols - side) / 2;
  cv::Mat square = bgr(cv::Rect(x0, y0, side, side));

  cv::Mat resized;
  if (side == resolution)
    resized = square.clone();
  else
    cv::resize(square, resized, cv::Size(resolution, resolution), 0, 0,
               side > resolution ? cv::INTER_AREA : cv::INTER_LINEAR);

  Tensor img({long(resolution), long(resolution), 3});
  for (int h = 0; h < resolution; ++h) {
    const auto* row = resized.ptr<cv::Vec3b>(h);
    for (int w = 0; w < resolution; ++w)
      for (int c = 0; c < 3; ++c)
        img[size_t((h * resolution + w) * 3 + c)] = u8_to_unit(double(row[w][2 - c]));
  }
  return img;
}

Tensor load_image_native(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  require(!bgr.empty(), "load_image_native: cannot decode " + path);
  Tensor img({long(bgr.rows), long(bgr.cols), 3});
  for (int h = 0; h < bgr.rows; ++h) {
    const auto* row = bgr.ptr<cv::Vec3b>(h);
    for (int w = 0; w < bgr.cols; ++w)
      for (int c = 0; c < 3; ++c)
        img[size_t((h * bgr.cols + w) * 3 + c)] = u8_to_unit(double(row[w][2 - c]));
  }
  return img;
}

void save_image(const Tensor& img, const std::string& path) {
  require(img.rank() == 3 && img.dim(2) == 3,
          "save_image: expected (H,W,3), got " + img.shape_str());
  const int H = int(img.dim(0)), W = int(img.dim(1));
  cv::Mat bgr(H, W, CV_8UC3);
  for (int h = 0; h < H; ++h) {
    auto* row = bgr.ptr<cv::Vec3b>(h);
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < 3; ++c)
        row[w][2 - c] = uchar(unit_to_u8(img[size_t((h * W + w) * 3 + c)]));
  }
  require(cv::imwrite(path, bgr), "save_image: cannot write " + path);
}

Tensor stack_images(const std::vector<Tensor>& imgs) {
  require(!imgs.empty(), "stack_images: empty list");
  const long H = imgs[0].dim(0), W = imgs[0].dim(1), C = imgs[0].dim(2);
  Tensor out({long(imgs.size()), H, W, C});
  for (size_t n = 0; n < imgs.size(); ++n) {
    require(imgs[n].dims() == imgs[0].dims(), "stack_images: mixed shapes");
    std::copy(imgs[n].data(), imgs[n].data() + imgs[n].size(),
              out.data() + n * size_t(H * W * C));
  }
  return out;
}

Tensor batch_slice(const Tensor& batch, long n) {
  require(batch.rank() == 4 && n >= 0 && n < batch.dim(0), "batch_slice: bad index");
  const long H = batch.dim(1), W = batch.dim(2), C = batch.dim(3);
  Tensor out({H, W, C});
  std::copy(batch.data() + n * H * W * C, batch.data() + (n + 1) * H * W * C, out.data());
  return out;
}

}  // namespace expredit
