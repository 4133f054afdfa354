from django.contrib import admin
from django.urls import path

# The admin is the only web surface: it browses the run registry
urlpatterns = [
    path('admin/', admin.site.urls),
]
