#include "cle/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "cle/error.hpp"

namespace cle {

namespace {

using Kind = ParseError::Kind;

class HeaderReader {
public:
    explicit HeaderReader(const std::vector<std::uint8_t>& bytes) : b_(bytes) {}

    void skip_space_and_comments()
    {
        while (pos_ < b_.size()) {
            if (std::isspace(b_[pos_])) {
                ++pos_;
            } else if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what)
    {
        skip_space_and_comments();
        if (pos_ >= b_.size()) throw ParseError(Kind::Truncated, pos_, std::string("missing ") + what);
        if (!std::isdigit(b_[pos_]))
            throw ParseError(Kind::BadHeader, pos_, std::string("expected ") + what);
        std::size_t v = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
            if (v > (1u << 24)) throw ParseError(Kind::BadHeader, pos_, std::string(what) + " too large");
            ++pos_;
        }
        return v;
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

private:
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> pgm_encode(const GrayImage& image)
{
    if (image.pixels.size() != image.width * image.height)
        throw ValidationError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                              " holds " + std::to_string(image.pixels.size()) + " pixels");
    const std::string header =
        "P5 " + std::to_string(image.width) + " " + std::to_string(image.height) + " 255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

GrayImage pgm_decode(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 2) throw ParseError(Kind::Truncated, bytes.size(), "file too short for a PGM magic");
    if (bytes[0] != 'P' || bytes[1] != '5') {
        const std::string magic(bytes.begin(), bytes.begin() + 2);
        throw ParseError(Kind::UnsupportedFormat, 0, "unsupported format '" + magic + "', expected binary PGM (P5)");
    }
    HeaderReader r(bytes);
    r.advance(2);
    const std::size_t w = r.number("width");
    const std::size_t h = r.number("height");
    const std::size_t maxval_at = (r.skip_space_and_comments(), r.pos());
    const std::size_t maxval = r.number("maxval");
    if (maxval > 255)
        throw ParseError(Kind::MaxvalTooLarge, maxval_at, "maxval " + std::to_string(maxval) + " exceeds 255");
    if (maxval == 0 || w == 0 || h == 0) throw ParseError(Kind::BadHeader, maxval_at, "zero extent or maxval");
    if (r.pos() >= bytes.size() || !std::isspace(bytes[r.pos()]))
        throw ParseError(Kind::Truncated, r.pos(), "missing whitespace after maxval");
    r.advance(1);

    const std::size_t start = r.pos();
    const std::size_t need = w * h;
    if (bytes.size() - start < need)
        throw ParseError(Kind::Truncated, bytes.size(),
                         "payload has " + std::to_string(bytes.size() - start) + " of " + std::to_string(need) +
                             " pixel bytes");
    GrayImage img(w, h);
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(start), need, img.pixels.begin());
    if (maxval != 255)
        for (auto& p : img.pixels) {
            if (p > maxval) throw ParseError(Kind::BadHeader, start, "pixel value exceeds maxval");
            p = static_cast<std::uint8_t>((p * 255u + maxval / 2) / maxval);
        }
    return img;
}

void pgm_write(const std::filesystem::path& path, const GrayImage& image)
{
    const auto bytes = pgm_encode(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

GrayImage pgm_read(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return pgm_decode(bytes);
    } catch (const ParseError& e) {
        throw ParseError(e.kind(), e.offset(), path.string() + ": " + e.message());
    }
}

GrayImage resize_bilinear(const GrayImage& image, std::size_t target_w, std::size_t target_h)
{
    if (target_w == 0 || target_h == 0)
        throw ValidationError("resize target " + std::to_string(target_w) + "x" + std::to_string(target_h) +
                              " has a zero extent");
    if (image.width == 0 || image.height == 0) throw ValidationError("cannot resize an empty image");
    if (target_w == image.width && target_h == image.height) return image;

    // Source coordinate of each destination sample, clamped to the border.
    struct Tap {
        std::size_t i0, i1;
        double f;
    };
    auto taps = [](std::size_t src, std::size_t dst) {
        std::vector<Tap> t(dst);
        const double scale = static_cast<double>(src) / static_cast<double>(dst);
        for (std::size_t d = 0; d < dst; ++d) {
            double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
            s = std::clamp(s, 0.0, static_cast<double>(src - 1));
            const auto i0 = static_cast<std::size_t>(s);
            t[d] = {i0, std::min(i0 + 1, src - 1), s - static_cast<double>(i0)};
        }
        return t;
    };
    const auto tx = taps(image.width, target_w);
    const auto ty = taps(image.height, target_h);

    GrayImage out(target_w, target_h);
    for (std::size_t y = 0; y < target_h; ++y) {
        for (std::size_t x = 0; x < target_w; ++x) {
            const double top = image.at(tx[x].i0, ty[y].i0) * (1.0 - tx[x].f) + image.at(tx[x].i1, ty[y].i0) * tx[x].f;
            const double bot = image.at(tx[x].i0, ty[y].i1) * (1.0 - tx[x].f) + image.at(tx[x].i1, ty[y].i1) * tx[x].f;
            const double v = top * (1.0 - ty[y].f) + bot * ty[y].f;
            out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
    }
    return out;
}

double mean_pixel(const std::vector<const GrayImage*>& images)
{
    double sum = 0.0;
    std::size_t count = 0;
    for (const GrayImage* img : images) {
        std::uint64_t s = 0;
        for (std::uint8_t p : img->pixels) s += p;
        sum += static_cast<double>(s);
        count += img->pixels.size();
    }
    if (count == 0) throw ValidationError("mean pixel of an empty image set");
    return sum / 255.0 / static_cast<double>(count);
}

void normalize_into(const GrayImage& image, double mean, float* dst)
{
    for (std::size_t i = 0; i < image.pixels.size(); ++i)
        dst[i] = static_cast<float>(static_cast<double>(image.pixels[i]) / 255.0 - mean);
}

Tensor normalize_for_net(const GrayImage& image, std::optional<double> mean)
{
    if (!mean) throw ConfigError("normalization mean is missing (checkpoint has no mean_pixel)");
    Tensor t({1, image.height, image.width});
    normalize_into(image, *mean, t.raw());
    return t;
}

} // namespace cle
